//! File formats shared with the external embedding exporter.

use mtca_core::data::EmbeddingFile;
use mtca_core::topic::{read_assignments, write_assignments, TopicSet};

// Written independently with Python's struct module:
// MEMB, version 1, d = 3, 2 rows, encoder "all-MiniLM-L6-v2",
// "ec1:0" → (0.5, -1.25, 3.0), "ec1:1" → (1e-3, 0.0, -0.0).
const EXPORTED: &str = "4d454d420100000003000000020000000000000010000000616c6c2d4d696e694c4d2d4c362d7632\
                        050000006563313a300000003f0000a0bf00004040050000006563313a316f12833a0000000000000080";

fn unhex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

#[test]
fn exported_embedding_file_parses_bit_exactly() {
    let bytes = unhex(EXPORTED);
    let f = EmbeddingFile::read(&mut bytes.as_slice()).unwrap();
    assert_eq!(f.encoder(), "all-MiniLM-L6-v2");
    assert_eq!((f.dim(), f.len()), (3, 2));
    assert_eq!(f.get("ec1:0").unwrap(), &[0.5f32, -1.25, 3.0]);
    let second = f.get("ec1:1").unwrap();
    assert_eq!(second[0].to_bits(), 1e-3f32.to_bits());
    assert_eq!(second[2].to_bits(), (-0.0f32).to_bits());
    assert_eq!(f.to_bytes(), bytes);
}

#[test]
fn truncated_export_is_rejected() {
    let bytes = unhex(EXPORTED);
    for cut in [3, 20, bytes.len() - 1] {
        assert!(EmbeddingFile::read(&mut &bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn topic_label_files_round_trip() {
    let text = "ec1:0\t2\t0.912345\nec1:1\t7\t0.500000\n\nsrc-4\t0\t1.000000\n";
    let rows = read_assignments(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[1].sentence_id.as_str(), rows[1].topic, rows[1].confidence), ("ec1:1", 7, 0.5));
    let mut out = Vec::new();
    write_assignments(&mut out, &rows).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text.replace("\n\n", "\n"));
    assert!(read_assignments("ec1:0\ttwo\t0.5\n".as_bytes()).is_err());
}

#[test]
fn topic_tsv_round_trips() {
    let text = "# name<TAB>terms\nrevenue\trevenue, sales,bookings\ncosts\tcosts,opex\n";
    let topics = TopicSet::read(text.as_bytes()).unwrap();
    assert_eq!(topics.len(), 2);
    assert_eq!(topics.no_topic(), 2);
    let mut out = Vec::new();
    topics.write(&mut out).unwrap();
    assert_eq!(TopicSet::read(out.as_slice()).unwrap(), topics);
    assert!(TopicSet::read("no tab here\n".as_bytes()).is_err());
}
