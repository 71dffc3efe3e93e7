//! BAD annotation from BED-like interval files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::BadValue;

/// Half-open `[start, end)` interval in 0-based coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadInterval {
    pub start: u64,
    pub end: u64,
    pub bad: f64,
}

/// Non-overlapping BAD intervals per chromosome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BadAnnotation {
    by_chrom: BTreeMap<String, Vec<BadInterval>>,
}

impl BadAnnotation {
    /// Sorts the intervals and rejects overlaps.
    pub fn new(intervals: Vec<(String, BadInterval)>) -> Result<Self> {
        let mut by_chrom: BTreeMap<String, Vec<BadInterval>> = BTreeMap::new();
        for (chrom, iv) in intervals {
            by_chrom.entry(chrom).or_default().push(iv);
        }
        for (chrom, v) in &mut by_chrom {
            v.sort_by_key(|iv| (iv.start, iv.end));
            for w in v.windows(2) {
                if w[1].start < w[0].end {
                    return Err(Error::AnnotationConflict {
                        chrom: chrom.clone(),
                        a_start: w[0].start,
                        a_end: w[0].end,
                        b_start: w[1].start,
                        b_end: w[1].end,
                    });
                }
            }
        }
        Ok(BadAnnotation { by_chrom })
    }

    /// Reads `chr, start, end, bad` lines. Comment, `track` and a
    /// non-numeric header line are skipped.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut intervals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("track") {
                continue;
            }
            let f: Vec<&str> = t.split('\t').map(str::trim).collect();
            if n == 1 && f.get(1).is_some_and(|s| s.parse::<u64>().is_err()) {
                continue;
            }
            if f.len() < 4 {
                let field = ["chr", "start", "end", "bad"][f.len()];
                return Err(Error::MissingField { path: path.to_path_buf(), line: n, field: field.into() });
            }
            let err = |m: String| Error::Parse { path: path.to_path_buf(), line: n, message: m };
            let start: u64 = f[1].parse().map_err(|_| err(format!("start '{}' is not an integer", f[1])))?;
            let end: u64 = f[2].parse().map_err(|_| err(format!("end '{}' is not an integer", f[2])))?;
            let bad: f64 = f[3].parse().map_err(|_| err(format!("BAD '{}' is not a number", f[3])))?;
            if end <= start {
                return Err(err(format!("empty interval [{start}, {end})")));
            }
            BadValue::new(bad).map_err(|e| err(e.to_string()))?;
            intervals.push((f[0].to_string(), BadInterval { start, end, bad }));
        }
        Self::new(intervals)
    }

    /// BAD at a 1-based position, if an interval covers it.
    pub fn lookup(&self, chrom: &str, pos: u64) -> Option<f64> {
        let x = pos.checked_sub(1)?;
        let v = self.by_chrom.get(chrom)?;
        let i = v.partition_point(|iv| iv.start <= x);
        let iv = v[..i].last()?;
        (x < iv.end).then_some(iv.bad)
    }

    pub fn len(&self) -> usize {
        self.by_chrom.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(chrom: &str, start: u64, end: u64, bad: f64) -> (String, BadInterval) {
        (chrom.to_string(), BadInterval { start, end, bad })
    }

    #[test]
    fn half_open_lookup() {
        let a = BadAnnotation::new(vec![iv("chr1", 100, 200, 2.0), iv("chr1", 200, 300, 3.0), iv("chr2", 0, 10, 1.5)]).unwrap();
        // 1-based 100 is 0-based 99: outside
        assert_eq!(a.lookup("chr1", 100), None);
        assert_eq!(a.lookup("chr1", 101), Some(2.0));
        assert_eq!(a.lookup("chr1", 200), Some(2.0));
        assert_eq!(a.lookup("chr1", 201), Some(3.0));
        assert_eq!(a.lookup("chr1", 301), None);
        assert_eq!(a.lookup("chr2", 1), Some(1.5));
        assert_eq!(a.lookup("chrX", 5), None);
    }

    #[test]
    fn overlap_is_a_conflict() {
        let e = BadAnnotation::new(vec![iv("chr1", 100, 200, 2.0), iv("chr1", 150, 300, 3.0)]).unwrap_err();
        assert!(matches!(e, Error::AnnotationConflict { a_start: 100, b_start: 150, .. }));
    }

    #[test]
    fn parses_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bed");
        fs::write(&p, "chr\tstart\tend\tbad\nchr1\t0\t1000\t2\n# note\nchr1\t1000\t5000\t1.5\n").unwrap();
        let a = BadAnnotation::from_path(&p).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.lookup("chr1", 1001), Some(1.5));
        fs::write(&p, "chr1\t0\t1000\t0.5\n").unwrap();
        assert!(matches!(BadAnnotation::from_path(&p), Err(Error::Parse { line: 1, .. })));
    }
}
