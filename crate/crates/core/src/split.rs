//! Stratified train / validation / test partitioning.
//!
//! Each class's indices are shuffled with a ChaCha8 generator seeded from
//! the configured seed, then cut at class-proportional boundaries. The test
//! set is carved from the full data first, the validation set from the
//! remaining pool. Split sizes are `round(n * fraction)` (halves go to the
//! training side); per-class counts are the floors of the proportional
//! shares, with leftover slots given to the classes with the largest
//! fractional remainders.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub valid_fraction_of_pool: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.20,
            valid_fraction_of_pool: 0.20,
            seed: 42,
        }
    }
}

/// Disjoint index lists covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train_idx.len() + self.valid_idx.len() + self.test_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const FILES: [&'static str; 3] = ["train_idx.txt", "valid_idx.txt", "test_idx.txt"];

    /// Writes `train_idx.txt`, `valid_idx.txt`, `test_idx.txt` (one index per line).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, idx) in Self::FILES.iter().zip([&self.train_idx, &self.valid_idx, &self.test_idx]) {
            let path = dir.join(name);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(f, "# seed {}", self.seed).map_err(|e| Error::io(&path, e))?;
            for i in idx {
                writeln!(f, "{i}").map_err(|e| Error::io(&path, e))?;
            }
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut lists = Vec::with_capacity(3);
        let mut seed = 0;
        for name in Self::FILES {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut idx = Vec::new();
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                if let Some(s) = line.strip_prefix("# seed ") {
                    seed = s.parse().map_err(|_| Error::Format(format!("{}: bad seed line", path.display())))?;
                    continue;
                }
                idx.push(
                    line.parse()
                        .map_err(|_| Error::Format(format!("{}: bad index {line:?}", path.display())))?,
                );
            }
            lists.push(idx);
        }
        let test_idx = lists.pop().unwrap();
        let valid_idx = lists.pop().unwrap();
        let train_idx = lists.pop().unwrap();
        Ok(DatasetSplit {
            train_idx,
            valid_idx,
            test_idx,
            seed,
        })
    }
}

/// `round(x)` with exact halves rounded down.
fn round_half_down(x: f64) -> usize {
    let f = x.floor();
    if x - f > 0.5 {
        f as usize + 1
    } else {
        f as usize
    }
}

/// Splits each class's shuffled indices, taking `count(class)` from the front.
fn carve(by_class: &mut [Vec<usize>; 2], fraction: f64) -> [Vec<usize>; 2] {
    let total: usize = by_class.iter().map(Vec::len).sum();
    let target = round_half_down(total as f64 * fraction);
    let shares: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * fraction).collect();
    let mut take: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut leftover = target.saturating_sub(take.iter().sum());
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(4) {
        if leftover == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            leftover -= 1;
        }
    }
    let mut out: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for c in 0..2 {
        out[c] = by_class[c].drain(..take[c]).collect();
    }
    out
}

pub fn stratified_split(labels: &[u8], cfg: &SplitConfig) -> Result<DatasetSplit> {
    for (name, f) in [
        ("test_fraction", cfg.test_fraction),
        ("valid_fraction_of_pool", cfg.valid_fraction_of_pool),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0,1), got {f}")));
        }
    }
    if labels.len() < 10 {
        return Err(Error::Stratification(format!(
            "need at least 10 rows to split, got {}",
            labels.len()
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 | 1 => by_class[l as usize].push(i),
            other => return Err(Error::Data(format!("label {other} at index {i} is not binary"))),
        }
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {c} has {} member(s); at least one per split is required",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }
    let test = carve(&mut by_class, cfg.test_fraction);
    let valid = carve(&mut by_class, cfg.valid_fraction_of_pool);

    let merge = |parts: [Vec<usize>; 2]| {
        let mut v: Vec<usize> = parts.into_iter().flatten().collect();
        v.sort_unstable();
        v
    };
    Ok(DatasetSplit {
        test_idx: merge(test),
        valid_idx: merge(valid),
        train_idx: merge(by_class),
        seed: cfg.seed,
    })
}

/// `#negatives / #positives` over the given (training) labels.
pub fn class_weight(train_labels: &[u8]) -> Result<f64> {
    let pos = train_labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 {
        return Err(Error::Domain("class weight needs at least one positive label".into()));
    }
    let neg = train_labels.len() - pos;
    Ok(neg as f64 / pos as f64)
}

/// Labels at the given indices.
pub fn gather(labels: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| labels[i]).collect()
}
