use crate::data::TranscriptRecord;

/// Index sets of a chronological train/validation/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Orders records by `(date, id)` and cuts them 8:1:1.
///
/// Train takes `floor(0.8·n)`; the rest is halved with validation rounded
/// down, so 17 records split 13/2/2 and 10 split 8/1/1.
pub fn chronological_split(records: &[TranscriptRecord]) -> Split {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| (records[a].date, &records[a].id).cmp(&(records[b].date, &records[b].id)));
    let n = order.len();
    let n_train = n * 8 / 10;
    let n_val = (n - n_train) / 2;
    Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}
