//! Per-sample gradient-norm log, importance scores and top-p% selection.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Epoch-major `E × N` matrix of per-sample gradient norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientLog {
    norms: Vec<f64>,
    n_samples: usize,
    epochs_completed: usize,
}

const LOG_MAGIC: &[u8; 8] = b"SIMPGLOG";
const LOG_VERSION: u32 = 1;

impl GradientLog {
    pub fn new(n_samples: usize) -> Self {
        GradientLog {
            norms: Vec::new(),
            n_samples,
            epochs_completed: 0,
        }
    }

    /// Builds a log from complete rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let mut log = GradientLog::new(n);
        for (e, row) in rows.iter().enumerate() {
            log.record_epoch(e, row)?;
        }
        Ok(log)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn row(&self, epoch: usize) -> &[f64] {
        &self.norms[epoch * self.n_samples..(epoch + 1) * self.n_samples]
    }

    pub fn get(&self, epoch: usize, sample: usize) -> f64 {
        self.norms[epoch * self.n_samples + sample]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.norms
    }

    /// Appends the norms of epoch `epoch`, which must be the next one.
    pub fn record_epoch(&mut self, epoch: usize, norms_row: &[f64]) -> Result<()> {
        if epoch != self.epochs_completed {
            return Err(Error::Log(format!(
                "expected epoch {}, got {epoch}",
                self.epochs_completed
            )));
        }
        if norms_row.len() != self.n_samples {
            return Err(Error::Log(format!(
                "row has {} entries for {} samples",
                norms_row.len(),
                self.n_samples
            )));
        }
        if let Some((s, v)) = norms_row
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Log(format!(
                "norm of sample {s} is {v}; norms must be finite and non-negative"
            )));
        }
        self.norms.extend_from_slice(norms_row);
        self.epochs_completed += 1;
        Ok(())
    }

    /// `epoch,0,1,…,N-1` header followed by one row per epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["epoch".to_string()];
        header.extend((0..self.n_samples).map(|s| s.to_string()));
        w.write_record(&header)?;
        for e in 0..self.epochs_completed {
            let mut rec = vec![e.to_string()];
            rec.extend(self.row(e).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Magic, `u32` version, `u64` epochs, `u64` samples, then little-endian
    /// `f64` norms in epoch-major order.
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(LOG_MAGIC)?;
        out.write_all(&LOG_VERSION.to_le_bytes())?;
        out.write_all(&(self.epochs_completed as u64).to_le_bytes())?;
        out.write_all(&(self.n_samples as u64).to_le_bytes())?;
        for v in &self.norms {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let bad = |what: &str| Error::Log(format!("malformed binary log: {what}"));
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("<gradient log>", e))?;
        if buf.len() < 28 || &buf[..8] != LOG_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        if u32_at(8) != LOG_VERSION {
            return Err(bad("unsupported version"));
        }
        let epochs = u64_at(12) as usize;
        let n = u64_at(20) as usize;
        let body = &buf[28..];
        if body.len() != epochs * n * 8 {
            return Err(bad("length does not match header"));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut log = GradientLog::new(n);
        for e in 0..epochs {
            log.record_epoch(e, &flat[e * n..(e + 1) * n])?;
        }
        Ok(log)
    }
}

/// Importance scores and the descending order they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub scores: Vec<f64>,
    /// Sample indices by descending score; equal scores keep ascending index.
    pub order: Vec<usize>,
}

impl ImportanceRanking {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ImportanceRanking { scores, order }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// One row per sample in rank order: `sample_index,score,rank` with
    /// 1-based ranks.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_index", "score", "rank"])?;
        for (rank, &s) in self.order.iter().enumerate() {
            w.write_record([
                s.to_string(),
                self.scores[s].to_string(),
                (rank + 1).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Mean gradient norm of every sample over all recorded epochs.
pub fn importance_scores(log: &GradientLog) -> Result<ImportanceRanking> {
    let epochs = log.epochs_completed();
    if epochs == 0 {
        return Err(Error::Log("no epochs recorded".into()));
    }
    let mut sums = vec![0.0; log.n_samples()];
    for e in 0..epochs {
        for (acc, v) in sums.iter_mut().zip(log.row(e)) {
            *acc += v;
        }
    }
    let scores = sums.into_iter().map(|s| s / epochs as f64).collect();
    Ok(ImportanceRanking::from_scores(scores))
}

/// A chosen subset of training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub p: f64,
    pub k: usize,
    /// Ascending, so retraining consumes the subset in temporal order.
    pub indices: Vec<usize>,
}

/// `⌈(p/100)·n⌉`.
pub fn subset_size(p: f64, n: usize) -> usize {
    let exact = p * n as f64 / 100.0;
    let nearest = exact.round();
    // p = 100k/n must give k even when that p is inexact in binary
    if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        exact.ceil() as usize
    }
}

/// Keeps the `⌈(p/100)·N⌉` highest-scoring samples. Summed importance over
/// subsets of at most `k` samples is maximized by exactly these.
pub fn select_top_p(ranking: &ImportanceRanking, p: f64) -> Result<SelectionResult> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentage must lie in (0, 100], got {p}"
        )));
    }
    let k = subset_size(p, ranking.len()).min(ranking.len());
    let mut indices = ranking.order[..k].to_vec();
    indices.sort_unstable();
    Ok(SelectionResult { p, k, indices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_epoch_appends() {
        let mut log = GradientLog::new(3);
        log.record_epoch(0, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(log.epochs_completed(), 1);
    }

    #[test]
    fn record_epoch_rejects_bad_rows() {
        let mut log = GradientLog::new(2);
        assert!(log.record_epoch(0, &[1.0, -0.1]).is_err());
        assert!(log.record_epoch(0, &[1.0]).is_err());
        assert!(log.record_epoch(0, &[1.0, f64::NAN]).is_err());
        log.record_epoch(0, &[1.0, 0.0]).unwrap();
        assert!(log.record_epoch(2, &[1.0, 1.0]).is_err());
        assert_eq!(log.epochs_completed(), 1);
    }

    #[test]
    fn scores_are_column_means() {
        let log = GradientLog::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        let r = importance_scores(&log).unwrap();
        assert_eq!(r.scores, vec![2.0, 4.0]);
        assert_eq!(r.order, vec![1, 0]);

        let single = GradientLog::from_rows(&[vec![0.5, 0.25, 4.0]]).unwrap();
        assert_eq!(
            importance_scores(&single).unwrap().scores,
            vec![0.5, 0.25, 4.0]
        );

        assert!(importance_scores(&GradientLog::new(4)).is_err());
    }

    #[test]
    fn selection_examples() {
        let scores: Vec<f64> = vec![0.1, 0.9, 0.3, 0.8, 0.2, 0.5, 0.7, 0.4, 0.6, 0.0];
        let sel = select_top_p(&ImportanceRanking::from_scores(scores), 30.0).unwrap();
        assert_eq!(sel.k, 3);
        assert_eq!(sel.indices, vec![1, 3, 6]);

        let seven = ImportanceRanking::from_scores(vec![1.0; 7]);
        assert_eq!(select_top_p(&seven, 50.0).unwrap().k, 4);

        let tie = ImportanceRanking::from_scores(vec![5.0, 5.0, 3.0]);
        let sel = select_top_p(&tie, 34.0).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.indices, vec![0, 1]);

        let tie2 = ImportanceRanking::from_scores(vec![3.0, 5.0, 5.0]);
        assert_eq!(select_top_p(&tie2, 30.0).unwrap().indices, vec![1]);
    }

    #[test]
    fn selection_rejects_out_of_range_p() {
        let r = ImportanceRanking::from_scores(vec![1.0, 2.0]);
        assert!(select_top_p(&r, 0.0).is_err());
        assert!(select_top_p(&r, 100.5).is_err());
        assert!(select_top_p(&r, f64::NAN).is_err());
        assert_eq!(select_top_p(&r, 100.0).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn subset_size_matches_integer_ceiling() {
        for n in 1..200usize {
            for k in 1..=n {
                assert_eq!(subset_size(100.0 * k as f64 / n as f64, n), k);
            }
        }
        for n in 0..400usize {
            for p in 1..=100usize {
                assert_eq!(
                    subset_size(p as f64, n),
                    (p * n).div_ceil(100),
                    "p={p} n={n}"
                );
            }
        }
    }

    #[test]
    fn binary_dump_round_trips() {
        let log = GradientLog::from_rows(&[vec![0.1, 2.0, 3.5], vec![0.0, 1e-300, 7.25]]).unwrap();
        let mut buf = Vec::new();
        log.write_binary(&mut buf).unwrap();
        assert_eq!(GradientLog::read_binary(buf.as_slice()).unwrap(), log);
        buf.pop();
        assert!(GradientLog::read_binary(buf.as_slice()).is_err());
    }
}
