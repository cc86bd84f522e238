//! CSV formats for feature sequences and score streams.
//!
//! Features: `timestamp,f0,...,f{D-1}`.
//! Scores: `timestamp,bg,step,stepsub,sp0..sp{B-1},ssp0..ssp{B-1}`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::FrameScores;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureSequence {
    pub timestamps: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    rec.iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::data(format!("row {line}: cannot parse {s:?}: {e}")))
        })
        .collect()
}

pub fn write_features_csv(w: impl Write, seq: &FeatureSequence) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = seq.dim().unwrap_or(0);
    let mut header = vec!["timestamp".to_string()];
    header.extend((0..d).map(|i| format!("f{i}")));
    out.write_record(&header)?;
    for (t, row) in seq.timestamps.iter().zip(&seq.rows) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_csv(r: impl Read) -> Result<FeatureSequence> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::data("feature CSV needs a timestamp and at least one feature column"));
    }
    let mut seq = FeatureSequence::default();
    for (i, rec) in rdr.records().enumerate() {
        let vals = parse_row(&rec?, i + 2)?;
        if vals.len() != width {
            return Err(Error::data(format!("row {} has {} columns, expected {width}", i + 2, vals.len())));
        }
        seq.timestamps.push(vals[0]);
        seq.rows.push(vals[1..].to_vec());
    }
    Ok(seq)
}

pub fn write_scores_csv(w: impl Write, scores: &[FrameScores]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let b = scores.first().map(FrameScores::bins).unwrap_or(0);
    let mut header: Vec<String> = ["timestamp", "bg", "step", "stepsub"].iter().map(|s| s.to_string()).collect();
    header.extend((0..b).map(|i| format!("sp{i}")));
    header.extend((0..b).map(|i| format!("ssp{i}")));
    out.write_record(&header)?;
    for fs in scores {
        if fs.bins() != b {
            return Err(Error::data("bin count changes within one score stream"));
        }
        let mut rec = vec![fs.timestamp.to_string()];
        rec.extend(fs.state_probs.iter().map(f64::to_string));
        rec.extend(fs.step_progress_dist.iter().map(f64::to_string));
        rec.extend(fs.substep_progress_dist.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scores_csv(r: impl Read) -> Result<Vec<FrameScores>> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers()?.len();
    if width < 6 || (width - 4) % 2 != 0 {
        return Err(Error::data(format!("score CSV has {width} columns; expected 4 + 2B")));
    }
    let b = (width - 4) / 2;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let v = parse_row(&rec?, i + 2)?;
        if v.len() != width {
            return Err(Error::data(format!("row {} has {} columns, expected {width}", i + 2, v.len())));
        }
        let fs = FrameScores {
            timestamp: v[0],
            state_probs: [v[1], v[2], v[3]],
            step_progress_dist: v[4..4 + b].to_vec(),
            substep_progress_dist: v[4 + b..].to_vec(),
        };
        fs.check()?;
        out.push(fs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normalized(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn scores_round_trip(rows in proptest::collection::vec(
            (0.0f64..100.0, proptest::collection::vec(0.01f64..1.0, 3), proptest::collection::vec(0.01f64..1.0, 4), proptest::collection::vec(0.01f64..1.0, 4)),
            1..20,
        )) {
            let scores: Vec<FrameScores> = rows
                .into_iter()
                .map(|(t, s, a, b)| {
                    let s = normalized(s);
                    FrameScores {
                        timestamp: t,
                        state_probs: [s[0], s[1], s[2]],
                        step_progress_dist: normalized(a),
                        substep_progress_dist: normalized(b),
                    }
                })
                .collect();
            let mut buf = Vec::new();
            write_scores_csv(&mut buf, &scores).unwrap();
            prop_assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), scores);
        }
    }

    #[test]
    fn features_round_trip() {
        let seq = FeatureSequence {
            timestamps: vec![0.0, 0.1, 0.2],
            rows: vec![vec![1.0, -2.5], vec![0.1, 0.2], vec![1e-9, 3.0]],
        };
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &seq).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("timestamp,f0,f1\n"));
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), seq);
    }

    #[test]
    fn malformed_score_csv_is_rejected() {
        let text = "timestamp,bg,step,stepsub,sp0,ssp0\n0,0.5,0.5,0.5,1,1\n";
        assert!(read_scores_csv(text.as_bytes()).is_err());
        let text = "timestamp,bg,step\n0,1,0\n";
        assert!(read_scores_csv(text.as_bytes()).is_err());
    }
}
