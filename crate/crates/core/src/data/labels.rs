use std::collections::HashMap;
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{chronological_split, TranscriptRecord};
use crate::error::{Error, Result};

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    if !(0.0..=100.0).contains(&p) || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("percentile needs finite values and p in [0, 100]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Class boundaries for the three volatility levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Thresholds {
    /// 33rd and 66th percentiles of the (training) values.
    pub fn fit(values: &[f64]) -> Result<Self> {
        Self::fit_at(values, 33.0, 66.0)
    }

    pub fn fit_at(values: &[f64], low: f64, high: f64) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::invalid(format!("need at least 3 values for thresholds, got {}", values.len())));
        }
        if low > high {
            return Err(Error::invalid("low percentile above high percentile"));
        }
        Ok(Self { low: percentile(values, low)?, high: percentile(values, high)? })
    }

    /// `v < low` → 0, `low ≤ v < high` → 1, otherwise 2.
    pub fn label(&self, v: f64) -> usize {
        if v < self.low {
            0
        } else if v < self.high {
            1
        } else {
            2
        }
    }
}

/// Fits thresholds on `train` and labels every value of `values`.
pub fn compute_labels(train: &[f64], values: &[f64]) -> Result<(Thresholds, Vec<usize>)> {
    let t = Thresholds::fit(train)?;
    Ok((t, values.iter().map(|&v| t.label(v)).collect()))
}

/// Closing prices per ticker, sorted by date.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PriceTable {
    series: HashMap<String, Vec<(NaiveDate, f64)>>,
}

impl PriceTable {
    /// Parses `ticker,date,close` CSV with a header line.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut series: HashMap<String, Vec<(NaiveDate, f64)>> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if n == 1 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [ticker, date, close] = fields[..] else {
                return Err(Error::Parse { line: n, msg: "expected ticker,date,close".into() });
            };
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|e| Error::Parse { line: n, msg: e.to_string() })?;
            let close: f64 = close.parse().map_err(|_| Error::Parse { line: n, msg: format!("bad price {close}") })?;
            if !(close > 0.0 && close.is_finite()) {
                return Err(Error::Parse { line: n, msg: format!("price must be positive, got {close}") });
            }
            series.entry(ticker.to_string()).or_default().push((date, close));
        }
        for s in series.values_mut() {
            s.sort_by_key(|p| p.0);
            if s.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Format("duplicate price date for one ticker".into()));
            }
        }
        Ok(Self { series })
    }

    pub fn get(&self, ticker: &str) -> Option<&[(NaiveDate, f64)]> {
        self.series.get(ticker).map(Vec::as_slice)
    }
}

/// `ln(stddev(r))` of the `n` daily log returns following `date`, where the
/// first return is taken against the last close on or before `date`.
pub fn log_volatility(prices: &[(NaiveDate, f64)], date: NaiveDate, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("volatility needs at least 2 returns"));
    }
    let base = prices
        .iter()
        .rposition(|p| p.0 <= date)
        .ok_or_else(|| Error::invalid(format!("no price on or before {date}")))?;
    if prices.len() < base + n + 1 {
        return Err(Error::invalid(format!("fewer than {n} prices after {date}")));
    }
    let window = &prices[base..=base + n];
    let returns: Vec<f64> = window.windows(2).map(|w| (w[1].1 / w[0].1).ln()).collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return Err(Error::invalid(format!("zero volatility after {date}")));
    }
    Ok(0.5 * var.ln())
}

/// Labels every record from the `horizon`-day log volatility after its date,
/// with thresholds fitted on the chronological training split.
pub fn label_from_prices(records: &mut [TranscriptRecord], prices: &PriceTable, horizon: usize) -> Result<Thresholds> {
    let mut values = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for r in records.iter() {
        let v = prices
            .get(&r.ticker)
            .ok_or_else(|| Error::invalid(format!("no prices for ticker {}", r.ticker)))
            .and_then(|p| log_volatility(p, r.date, horizon));
        match v {
            Ok(v) => values.push(v),
            Err(e) => failures.push(format!("{}: {e}", r.id)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::invalid(format!("cannot label {} transcript(s): {}", failures.len(), failures.join("; "))));
    }
    let split = chronological_split(records);
    let train: Vec<f64> = split.train.iter().map(|&i| values[i]).collect();
    let t = Thresholds::fit(&train)?;
    for (r, v) in records.iter_mut().zip(&values) {
        r.label = Some(t.label(*v));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v = [3.1, 0.5, 2.2, 9.9, 4.0, 1.7, 6.3];
        // numpy.percentile reference values
        assert!((percentile(&v, 33.0).unwrap() - 2.19).abs() < 1e-12);
        assert!((percentile(&v, 66.0).unwrap() - 3.964).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0).unwrap(), 0.5);
        assert_eq!(percentile(&v, 100.0).unwrap(), 9.9);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn uniform_values_split_evenly() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (_, labels) = compute_labels(&v, &v).unwrap();
        let counts: Vec<usize> = (0..3).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        assert_eq!(counts, vec![33, 33, 34]);
    }

    #[test]
    fn equal_values_all_high() {
        let v = [2.0; 9];
        let (t, labels) = compute_labels(&v, &v).unwrap();
        assert_eq!(t.low, t.high);
        assert!(labels.iter().all(|&l| l == 2));
        assert!(compute_labels(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn volatility_reference() {
        let d = |day| NaiveDate::from_ymd_opt(2020, 3, day).unwrap();
        let prices = vec![(d(1), 9.0), (d(2), 10.0), (d(3), 10.5), (d(4), 10.2), (d(5), 10.8)];
        // numpy: log(std(diff(log([10, 10.5, 10.2, 10.8]))))
        let v = log_volatility(&prices, d(2), 3).unwrap();
        assert!((v - (-3.249_646_474_025_457_4)).abs() < 1e-12);
        assert!(log_volatility(&prices, d(3), 3).is_err());
        assert!(log_volatility(&prices[1..], d(1), 2).is_err());
    }

    #[test]
    fn price_csv() {
        let csv = "ticker,date,close\nAAA,2020-01-03,11\nAAA,2020-01-02,10\nBBB,2020-01-02,5\n";
        let t = PriceTable::read(csv.as_bytes()).unwrap();
        let a = t.get("AAA").unwrap();
        assert_eq!(a[0].1, 10.0);
        assert_eq!(a.len(), 2);
        assert!(PriceTable::read("h\nAAA,2020-01-02,-1\n".as_bytes()).is_err());
        assert!(PriceTable::read("h\nAAA,2020-13-02,1\n".as_bytes()).is_err());
    }

    #[test]
    fn prices_label_by_training_thresholds() {
        use crate::data::Session;
        let day = |d: u64| NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(d);
        let mut csv = String::from("ticker,date,close\n");
        let mut records = Vec::new();
        for k in 0..10u64 {
            let ticker = format!("T{k}");
            // wider swings for later tickers
            for d in 0..12 {
                let close = 100.0 * (1.0 + 0.01 * (k + 1) as f64 * if d % 2 == 0 { 1.0 } else { -1.0 });
                csv.push_str(&format!("{ticker},{},{close}\n", day(d)));
            }
            records.push(TranscriptRecord {
                id: format!("r{k}"),
                ticker,
                date: day(k % 3),
                session: Session::Opening,
                sentences: vec!["x".into()],
                label: None,
            });
        }
        let prices = PriceTable::read(csv.as_bytes()).unwrap();
        label_from_prices(&mut records, &prices, 3).unwrap();
        let labels: Vec<usize> = records.iter().map(|r| r.label.unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]), "{labels:?}");
        assert_eq!(labels[0], 0);
        assert_eq!(labels[9], 2);

        records[4].ticker = "missing".into();
        let err = label_from_prices(&mut records, &prices, 3).unwrap_err().to_string();
        assert!(err.contains("r4"), "{err}");
    }
}
