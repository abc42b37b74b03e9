//! Paired samples with their generation metadata, and a columnar text format.
//!
//! File layout: `#`-prefixed header lines `# key value` (format tag, library
//! version, task, seed, shapes, then every generator setting), followed by a CSV table with
//! header `id,z0,..,z{d-1},t0,..,t{k-1}`. Targets are row-major.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learn::Sample;

pub const DATASET_FORMAT: &str = "owa-pto-dataset-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Portfolio,
    Grid,
    Rank,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Portfolio => "portfolio",
            TaskKind::Grid => "grid",
            TaskKind::Rank => "rank",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "portfolio" => Ok(TaskKind::Portfolio),
            "grid" => Ok(TaskKind::Grid),
            "rank" => Ok(TaskKind::Rank),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: TaskKind,
    pub seed: u64,
    /// Rows of each target (`m` criteria, or 1).
    pub target_rows: usize,
    /// Columns of each target.
    pub target_cols: usize,
    pub feature_dim: usize,
    /// Generator settings echoed into the file header.
    pub meta: Vec<(String, String)>,
    pub samples: Vec<Sample>,
}

/// Disjoint index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Shuffles indices with `seed` and cuts them into consecutive blocks.
    pub fn split(&self, train: usize, val: usize, test: usize, seed: u64) -> Result<Splits> {
        if train + val + test > self.len() {
            return Err(Error::InvalidArgument(format!(
                "split {train}+{val}+{test} exceeds {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Splits {
            train: idx[..train].to_vec(),
            val: idx[train..train + val].to_vec(),
            test: idx[train + val..train + val + test].to_vec(),
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Parse(e.to_string());
        writeln!(out, "# format {DATASET_FORMAT}").map_err(io)?;
        writeln!(out, "# version {}", env!("CARGO_PKG_VERSION")).map_err(io)?;
        writeln!(out, "# task {}", self.task.name()).map_err(io)?;
        writeln!(out, "# seed {}", self.seed).map_err(io)?;
        writeln!(out, "# target_rows {}", self.target_rows).map_err(io)?;
        writeln!(out, "# target_cols {}", self.target_cols).map_err(io)?;
        writeln!(out, "# feature_dim {}", self.feature_dim).map_err(io)?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k} {v}").map_err(io)?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.feature_dim).map(|i| format!("z{i}")));
        header.extend((0..self.target_rows * self.target_cols).map(|i| format!("t{i}")));
        wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(s.z.iter().chain(&s.target).map(|v| format!("{v:?}")));
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush().map_err(io)?;
        Ok(())
    }

    pub fn read_from(input: &mut dyn BufRead) -> Result<Self> {
        let mut header = Vec::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                header.push((k.to_string(), v.to_string()));
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let take = |key: &str| -> Result<String> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Parse(format!("dataset header lacks `{key}`")))
        };
        if take("format")? != DATASET_FORMAT {
            return Err(Error::Parse("unsupported dataset format".into()));
        }
        let num = |key: &str| -> Result<usize> {
            take(key)?
                .parse()
                .map_err(|_| Error::Parse(format!("bad `{key}`")))
        };
        let task = take("task")?.parse()?;
        let seed = take("seed")?
            .parse()
            .map_err(|_| Error::Parse("bad seed".into()))?;
        let (target_rows, target_cols, feature_dim) =
            (num("target_rows")?, num("target_cols")?, num("feature_dim")?);
        let fixed = ["format", "version", "task", "seed", "target_rows", "target_cols", "feature_dim"];
        let meta = header
            .into_iter()
            .filter(|(k, _)| !fixed.contains(&k.as_str()))
            .collect();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let width = 1 + feature_dim + target_rows * target_cols;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != width {
                return Err(Error::Parse(format!("row has {} fields, expected {width}", rec.len())));
            }
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            let (z, t) = vals.split_at(feature_dim);
            samples.push(Sample {
                z: z.to_vec(),
                target: t.to_vec(),
            });
        }
        Ok(Self {
            task,
            seed,
            target_rows,
            target_cols,
            feature_dim,
            meta,
            samples,
        })
    }
}
