use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Session {
    #[serde(rename = "OP")]
    Opening,
    #[serde(rename = "QA")]
    QuestionAnswer,
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Session::Opening => "OP",
            Session::QuestionAnswer => "QA",
        })
    }
}

/// One earnings-call session as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub id: String,
    pub ticker: String,
    pub date: NaiveDate,
    pub session: Session,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl TranscriptRecord {
    pub fn sentence_id(&self, index: usize) -> String {
        sentence_id(&self.id, index)
    }
}

/// Identifier of sentence `index` of transcript `transcript`.
pub fn sentence_id(transcript: &str, index: usize) -> String {
    format!("{transcript}:{index}")
}

/// Reads line-delimited JSON transcripts. Blank lines are skipped, records
/// longer than `max_len` sentences are truncated. Returns the records and
/// any warnings (also sent to the log).
pub fn read_transcripts<R: BufRead>(reader: R, max_len: usize, num_classes: usize) -> Result<(Vec<TranscriptRecord>, Vec<String>)> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: n, msg: e.to_string() })?;
        let fail = |msg: String| Error::Parse { line: n, msg };
        if rec.id.is_empty() || rec.id.contains(['\t', '\n']) {
            return Err(fail("transcript id must be non-empty and free of tabs".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(fail(format!("duplicate transcript id {}", rec.id)));
        }
        if rec.sentences.is_empty() {
            return Err(fail(format!("transcript {} has no sentences", rec.id)));
        }
        if let Some(l) = rec.label {
            if l >= num_classes {
                return Err(fail(format!("label {l} outside 0..{num_classes}")));
            }
        }
        if rec.sentences.len() > max_len {
            let w = format!("transcript {} has {} sentences; truncated to {max_len}", rec.id, rec.sentences.len());
            log::warn!("{w}");
            warnings.push(w);
            rec.sentences.truncate(max_len);
        }
        records.push(rec);
    }
    if records.is_empty() {
        let w = "transcript file holds no records".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok((records, warnings))
}

pub fn write_transcripts<W: Write>(w: &mut W, records: &[TranscriptRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A cross-domain sentence available as a replacement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSentence {
    pub id: String,
    pub text: String,
    /// When set, the sentence only replaces sentences of this session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<Session>,
}

pub fn read_sources<R: BufRead>(reader: R) -> Result<Vec<SourceSentence>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SourceSentence = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate source id {}", s.id) });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_sources<W: Write>(w: &mut W, sources: &[SourceSentence]) -> Result<()> {
    for s in sources {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"id":"a","ticker":"AAA","date":"2020-01-02","session":"OP","sentences":["Hello there.","Revenue grew."],"label":1}
{"id":"b","ticker":"BBB","date":"2020-02-03","session":"QA","sentences":["Any questions?"]}

{"id":"c","ticker":"AAA","date":"2020-04-05","session":"QA","sentences":["x","y","z"],"label":2}
"#;

    #[test]
    fn parses_fixture() {
        let (recs, warnings) = read_transcripts(FIXTURE.as_bytes(), 500, 3).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].ticker, "AAA");
        assert_eq!(recs[0].date, NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
        assert_eq!(recs[0].session, Session::Opening);
        assert_eq!(recs[0].sentences, vec!["Hello there.", "Revenue grew."]);
        assert_eq!(recs[0].label, Some(1));
        assert_eq!(recs[1].label, None);
        assert_eq!(recs[1].session, Session::QuestionAnswer);
        assert_eq!(recs[2].sentence_id(2), "c:2");
        let mut buf = Vec::new();
        write_transcripts(&mut buf, &recs).unwrap();
        assert_eq!(read_transcripts(buf.as_slice(), 500, 3).unwrap().0, recs);
    }

    #[test]
    fn empty_file_warns() {
        let (recs, warnings) = read_transcripts("".as_bytes(), 500, 3).unwrap();
        assert!(recs.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn truncates_long_records() {
        let rec = TranscriptRecord {
            id: "long".into(),
            ticker: "T".into(),
            date: NaiveDate::from_ymd_opt(2021, 5, 1).unwrap(),
            session: Session::Opening,
            sentences: (0..501).map(|i| format!("s{i}")).collect(),
            label: None,
        };
        let line = serde_json::to_string(&rec).unwrap();
        let (recs, warnings) = read_transcripts(line.as_bytes(), 500, 3).unwrap();
        assert_eq!(recs[0].sentences.len(), 500);
        assert_eq!(recs[0].sentences[499], "s499");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = format!("{}\nnot json\n", FIXTURE.lines().next().unwrap());
        match read_transcripts(text.as_bytes(), 500, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = FIXTURE.lines().next().unwrap().replace("\"label\":1", "\"label\":3");
        assert!(read_transcripts(bad_label.as_bytes(), 500, 3).is_err());
        let dup = format!("{0}\n{0}\n", FIXTURE.lines().next().unwrap());
        assert!(read_transcripts(dup.as_bytes(), 500, 3).is_err());
        let no_sentences = FIXTURE.lines().nth(1).unwrap().replace("[\"Any questions?\"]", "[]");
        assert!(read_transcripts(no_sentences.as_bytes(), 500, 3).is_err());
    }

    #[test]
    fn sources_round_trip() {
        let s = vec![
            SourceSentence { id: "n1".into(), text: "Oil rose.".into(), session: None },
            SourceSentence { id: "n2".into(), text: "Q?".into(), session: Some(Session::QuestionAnswer) },
        ];
        let mut buf = Vec::new();
        write_sources(&mut buf, &s).unwrap();
        assert_eq!(read_sources(buf.as_slice()).unwrap(), s);
        let dup = format!("{0}{0}", String::from_utf8(buf[..buf.iter().position(|&b| b == b'\n').unwrap() + 1].to_vec()).unwrap());
        assert!(read_sources(dup.as_bytes()).is_err());
    }
}
