//! Parameter spaces, simulation datasets and space-filling designs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub unit: String,
}

impl Parameter {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            unit: unit.into(),
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// Ordered list of continuous, bounded design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub params: Vec<Parameter>,
}

impl DesignSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self> {
        let space = Self { params };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidSpace("no parameters".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            if p.name.trim().is_empty() {
                return Err(Error::InvalidSpace("empty parameter name".into()));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate parameter `{}`", p.name)));
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::InvalidSpace(format!(
                    "parameter `{}` has degenerate bounds [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.params.iter().map(Parameter::midpoint).collect()
    }

    /// Checks a point against the bounds, naming the first offending parameter.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "design point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (p, &v) in self.params.iter().zip(x) {
            if !p.contains(v) {
                return Err(Error::OutOfBounds {
                    name: p.name.clone(),
                    value: v,
                    lower: p.lower,
                    upper: p.upper,
                });
            }
        }
        Ok(())
    }

    /// Parses either a JSON document (`{"params": [...]}`) or a plain text
    /// listing with one `name lower upper [unit]` entry per line. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let space: DesignSpace = if trimmed.starts_with('{') {
            serde_json::from_str(text)?
        } else {
            let mut params = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < 3 {
                    return Err(Error::Parse(format!(
                        "line {}: expected `name lower upper [unit]`",
                        lineno + 1
                    )));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                };
                params.push(Parameter::new(
                    fields[0],
                    num(fields[1])?,
                    num(fields[2])?,
                    fields[3..].join(" "),
                ));
            }
            DesignSpace { params }
        };
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Simulation samples in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub space: Option<DesignSpace>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        if x.ncols() != input_names.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset input columns",
                expected: input_names.len(),
                got: x.ncols(),
            });
        }
        if y.ncols() != output_names.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset output columns",
                expected: output_names.len(),
                got: y.ncols(),
            });
        }
        Ok(Self {
            x,
            y,
            input_names,
            output_names,
            space: None,
        })
    }

    /// Tags the dataset with a design space after checking every row.
    pub fn with_space(mut self, space: DesignSpace) -> Result<Self> {
        if space.names() != self.input_names {
            return Err(Error::InvalidArgument(
                "design space parameter names differ from dataset inputs".into(),
            ));
        }
        for (i, row) in self.x.outer_iter().enumerate() {
            space
                .check_point(row.as_slice().expect("standard layout"))
                .map_err(|e| Error::Row {
                    row: i,
                    source: Box::new(e),
                })?;
        }
        self.space = Some(space);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            space: self.space.clone(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let header: Vec<&str> = self
            .input_names
            .iter()
            .chain(&self.output_names)
            .map(String::as_str)
            .collect();
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (xr, yr) in self.x.outer_iter().zip(self.y.outer_iter()) {
            record.clear();
            record.extend(xr.iter().chain(yr.iter()).map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV whose first `n_inputs` columns are inputs and the rest outputs.
    pub fn read_csv(path: impl AsRef<Path>, n_inputs: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if n_inputs == 0 || n_inputs >= header.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: cannot split {} columns into {n_inputs} inputs and at least one output",
                path.display(),
                header.len()
            )));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                let v = field.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("{} row {}: `{field}`: {e}", path.display(), rows + 1))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let all = Array2::from_shape_vec((rows, header.len()), values)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let x = all.slice(ndarray::s![.., ..n_inputs]).to_owned();
        let y = all.slice(ndarray::s![.., n_inputs..]).to_owned();
        Dataset::new(
            x,
            y,
            header[..n_inputs].to_vec(),
            header[n_inputs..].to_vec(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhsVariant {
    /// Uniform position within each bin.
    #[default]
    Jittered,
    /// Bin centres.
    Midpoint,
}

/// Latin-hypercube design with `n` points, one per marginal bin in every dimension.
pub fn lhs_sample(space: &DesignSpace, n: usize, seed: u64) -> Result<Array2<f64>> {
    lhs_sample_with(space, n, seed, LhsVariant::Jittered)
}

pub fn lhs_sample_with(
    space: &DesignSpace,
    n: usize,
    seed: u64,
    variant: LhsVariant,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("LHS needs n >= 1".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.dim();
    let mut out = Array2::zeros((n, d));
    let mut perm: Vec<usize> = (0..n).collect();
    for (j, p) in space.params.iter().enumerate() {
        perm.shuffle(&mut rng);
        let width = (p.upper - p.lower) / n as f64;
        for (i, &bin) in perm.iter().enumerate() {
            let u = match variant {
                LhsVariant::Jittered => rng.random::<f64>(),
                LhsVariant::Midpoint => 0.5,
            };
            let v = p.lower + (bin as f64 + u) * width;
            // keep the half-open [lower, upper) contract under round-off
            out[[i, j]] = v.min(p.upper.next_down());
        }
    }
    Ok(out)
}

/// Seeded disjoint split into `(train, test)` with `n_test` test rows.
pub fn split_train_test(ds: &Dataset, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidArgument(format!(
            "n_test must be in (0, {n}), got {n_test}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at(n_test);
    Ok((ds.select_rows(train), ds.select_rows(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit(d: usize) -> DesignSpace {
        DesignSpace::new(
            (0..d)
                .map(|j| Parameter::new(format!("x{j}"), 0.0, 1.0, ""))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_spaces() {
        let dup = DesignSpace::new(vec![
            Parameter::new("a", 0.0, 1.0, ""),
            Parameter::new("a", 0.0, 2.0, ""),
        ]);
        assert!(matches!(dup, Err(Error::InvalidSpace(_))));
        let flat = DesignSpace::new(vec![Parameter::new("a", 1.0, 1.0, "")]);
        assert!(matches!(flat, Err(Error::InvalidSpace(_))));
        let empty_name = DesignSpace::new(vec![Parameter::new(" ", 0.0, 1.0, "")]);
        assert!(matches!(empty_name, Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn lhs_single_point_covers_range() {
        let x = lhs_sample(&unit(1), 1, 99).unwrap();
        assert_eq!(x.dim(), (1, 1));
        assert!((0.0..1.0).contains(&x[[0, 0]]));
    }

    #[test]
    fn lhs_zero_points_rejected() {
        assert!(matches!(lhs_sample(&unit(2), 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lhs_eight_points_one_per_bin() {
        let x = lhs_sample(&unit(2), 8, 7).unwrap();
        for col in x.columns() {
            let mut counts = [0; 8];
            for v in col {
                counts[(v * 8.0).floor() as usize] += 1;
            }
            assert_eq!(counts, [1; 8]);
        }
    }

    #[test]
    fn lhs_five_points_on_0_10() {
        let space = DesignSpace::new(vec![Parameter::new("a", 0.0, 10.0, "")]).unwrap();
        let x = lhs_sample(&space, 5, 3).unwrap();
        let mut v: Vec<f64> = x.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        // brute-force: each bin [2k, 2k+2) has exactly one member
        for (k, val) in v.iter().enumerate() {
            let members = v
                .iter()
                .filter(|&&s| s >= 2.0 * k as f64 && s < 2.0 * (k + 1) as f64)
                .count();
            assert_eq!(members, 1);
            assert!(*val >= 2.0 * k as f64 && *val < 2.0 * (k + 1) as f64);
        }
    }

    #[test]
    fn lhs_midpoint_uses_bin_centres() {
        let x = lhs_sample_with(&unit(1), 4, 0, LhsVariant::Midpoint).unwrap();
        let mut v: Vec<f64> = x.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn lhs_is_deterministic() {
        let a = lhs_sample(&unit(3), 17, 5).unwrap();
        let b = lhs_sample(&unit(3), 17, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, lhs_sample(&unit(3), 17, 6).unwrap());
    }

    fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| 10.0 * i as f64);
        Dataset::new(x, y, vec!["x".into()], vec!["y".into()]).unwrap()
    }

    #[test]
    fn split_partitions_rows() {
        let ds = toy(10);
        let (train, test) = split_train_test(&ds, 3, 0).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        let mut all: Vec<f64> = train.x.column(0).iter().chain(test.x.column(0)).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        // rows stay paired
        for (x, y) in test.x.column(0).iter().zip(test.y.column(0)) {
            assert_eq!(*y, 10.0 * x);
        }
        let (train2, test2) = split_train_test(&ds, 3, 0).unwrap();
        assert_eq!((train, test), (train2, test2));
    }

    #[test]
    fn split_two_rows() {
        let (a, b) = split_train_test(&toy(2), 1, 1).unwrap();
        let mut v = vec![a.x[[0, 0]], b.x[[0, 0]]];
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn split_rejects_out_of_range() {
        assert!(split_train_test(&toy(4), 0, 0).is_err());
        assert!(split_train_test(&toy(4), 4, 0).is_err());
    }

    #[test]
    fn dataset_shape_checks() {
        let err = Dataset::new(
            array![[1.0], [2.0]],
            array![[1.0]],
            vec!["x".into()],
            vec!["y".into()],
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn with_space_rejects_out_of_bounds_rows() {
        let ds = toy(3);
        let space = DesignSpace::new(vec![Parameter::new("x", 0.0, 1.5, "")]).unwrap();
        let err = ds.with_space(space).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }));
    }

    #[test]
    fn parses_line_format_and_json() {
        let text = "# comment\nu_wall 0.1 1.0 W/m2K\n\nwwr 0.1 0.9\n";
        let space = DesignSpace::parse(text).unwrap();
        assert_eq!(space.dim(), 2);
        assert_eq!(space.params[0].unit, "W/m2K");
        assert_eq!(space.params[1].unit, "");
        let json = serde_json::to_string(&space).unwrap();
        assert_eq!(DesignSpace::parse(&json).unwrap(), space);
        assert!(DesignSpace::parse("a 1 x").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = Dataset::new(
            array![[0.1, 1.0 / 3.0], [2.5, -1e-7]],
            array![[1e10], [0.0]],
            vec!["a".into(), "b".into()],
            vec!["y".into()],
        )
        .unwrap();
        ds.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "a,b,y");
        assert_eq!(Dataset::read_csv(&path, 2).unwrap(), ds);
    }
}
