use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::aes::{self, AesBlock, AesKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceSetError {
    #[error("{what} has {got} rows but the set holds {expected} traces")]
    RowMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// A batch of captured (or simulated) traces with per-trace AES inputs and
/// outputs. Row `i` of the sample matrix belongs to `plaintexts[i]` and
/// `ciphertexts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Array2<f32>,
    plaintexts: Vec<AesBlock>,
    ciphertexts: Vec<AesBlock>,
    key: Option<AesKey>,
    meta: BTreeMap<String, String>,
}

impl TraceSet {
    pub fn new(
        traces: Array2<f32>,
        plaintexts: Vec<AesBlock>,
        ciphertexts: Vec<AesBlock>,
        key: Option<AesKey>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, TraceSetError> {
        let expected = traces.nrows();
        for (what, got) in [
            ("plaintexts", plaintexts.len()),
            ("ciphertexts", ciphertexts.len()),
        ] {
            if got != expected {
                return Err(TraceSetError::RowMismatch {
                    what,
                    got,
                    expected,
                });
            }
        }
        Ok(Self {
            traces,
            plaintexts,
            ciphertexts,
            key,
            meta,
        })
    }

    /// Builds a set from samples and plaintexts alone, computing ciphertexts
    /// from `key` when given (all-zero ciphertexts otherwise).
    pub fn from_plaintexts(
        traces: Array2<f32>,
        plaintexts: Vec<AesBlock>,
        key: Option<AesKey>,
    ) -> Result<Self, TraceSetError> {
        let ciphertexts = match &key {
            Some(k) => plaintexts.iter().map(|pt| aes::encrypt(k, pt)).collect(),
            None => vec![AesBlock::default(); plaintexts.len()],
        };
        Self::new(traces, plaintexts, ciphertexts, key, BTreeMap::new())
    }

    pub fn trace_count(&self) -> usize {
        self.traces.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.traces.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.trace_count() == 0
    }

    pub fn traces(&self) -> ArrayView2<'_, f32> {
        self.traces.view()
    }

    pub fn trace(&self, i: usize) -> ArrayView1<'_, f32> {
        self.traces.row(i)
    }

    pub fn plaintexts(&self) -> &[AesBlock] {
        &self.plaintexts
    }

    pub fn ciphertexts(&self) -> &[AesBlock] {
        &self.ciphertexts
    }

    pub fn key(&self) -> Option<&AesKey> {
        self.key.as_ref()
    }

    pub fn key_known(&self) -> bool {
        self.key.is_some()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Drops the key, as an adversary-side capture would be stored.
    pub fn forget_key(&mut self) {
        self.key = None;
    }

    /// Replaces the sample matrix, keeping everything else. The row count
    /// must not change.
    pub fn with_traces(mut self, traces: Array2<f32>) -> Result<Self, TraceSetError> {
        if traces.nrows() != self.trace_count() {
            return Err(TraceSetError::RowMismatch {
                what: "replacement traces",
                got: traces.nrows(),
                expected: self.trace_count(),
            });
        }
        self.traces = traces;
        Ok(self)
    }

    pub fn into_parts(
        self,
    ) -> (
        Array2<f32>,
        Vec<AesBlock>,
        Vec<AesBlock>,
        Option<AesKey>,
        BTreeMap<String, String>,
    ) {
        (
            self.traces,
            self.plaintexts,
            self.ciphertexts,
            self.key,
            self.meta,
        )
    }

    /// True when no key is stored, or every ciphertext is the encryption of
    /// its plaintext under the stored key.
    pub fn ciphertexts_consistent(&self) -> bool {
        match &self.key {
            None => true,
            Some(k) => self
                .plaintexts
                .iter()
                .zip(&self.ciphertexts)
                .all(|(pt, ct)| aes::encrypt(k, pt) == *ct),
        }
    }

    /// Keeps the traces whose indices are listed, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let s = self.sample_count();
        let mut traces = Array2::zeros((indices.len(), s));
        for (dst, &i) in indices.iter().enumerate() {
            traces.row_mut(dst).assign(&self.traces.row(i));
        }
        Self {
            traces,
            plaintexts: indices.iter().map(|&i| self.plaintexts[i]).collect(),
            ciphertexts: indices.iter().map(|&i| self.ciphertexts[i]).collect(),
            key: self.key,
            meta: self.meta.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_row_mismatch() {
        let err = TraceSet::new(
            Array2::zeros((3, 4)),
            vec![AesBlock::default(); 2],
            vec![AesBlock::default(); 3],
            None,
            BTreeMap::new(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            TraceSetError::RowMismatch {
                what: "plaintexts",
                got: 2,
                expected: 3
            }
        );
    }

    #[test]
    fn ciphertext_consistency() {
        let key = AesKey([7; 16]);
        let pts = vec![AesBlock([1; 16]), AesBlock([2; 16])];
        let ts = TraceSet::from_plaintexts(Array2::zeros((2, 5)), pts, Some(key)).unwrap();
        assert!(ts.ciphertexts_consistent());
        let (traces, pts, mut cts, key, meta) = ts.into_parts();
        cts[1].0[0] ^= 1;
        let bad = TraceSet::new(traces, pts, cts, key, meta).unwrap();
        assert!(!bad.ciphertexts_consistent());
    }

    #[test]
    fn zero_traces_keep_sample_count() {
        let ts = TraceSet::from_plaintexts(Array2::zeros((0, 9)), vec![], None).unwrap();
        assert_eq!(ts.sample_count(), 9);
        assert!(ts.is_empty());
    }
}
