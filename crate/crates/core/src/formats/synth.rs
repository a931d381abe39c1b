use super::{CsrMatrix, FormatError};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Row-length distribution of a synthetic matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    /// Every row holds exactly `nnz_per_row` nonzeros.
    Uniform { nnz_per_row: usize },
    /// Row degrees drawn from a discrete Pareto law `P(d >= x) = x^(1 - exponent)`,
    /// clamped to `max_degree` and to the column count.
    PowerLaw { exponent: f64, max_degree: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub distribution: Distribution,
}

impl SynthSpec {
    pub fn uniform(rows: usize, cols: usize, nnz_per_row: usize) -> Self {
        Self {
            rows,
            cols,
            distribution: Distribution::Uniform { nnz_per_row },
        }
    }

    pub fn power_law(rows: usize, cols: usize, exponent: f64, max_degree: usize) -> Self {
        Self {
            rows,
            cols,
            distribution: Distribution::PowerLaw {
                exponent,
                max_degree,
            },
        }
    }
}

/// Parses `uniform:RxC[:k]` or `powerlaw:RxC[:exponent,max_degree]`.
impl FromStr for SynthSpec {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| FormatError::InvalidSynth(format!("'{s}': {msg}"));
        let mut parts = s.split(':');
        let dist = parts.next().unwrap_or_default();
        let dims = parts.next().ok_or_else(|| bad("missing RxC"))?;
        let params = parts.next();
        if parts.next().is_some() {
            return Err(bad("too many ':' sections"));
        }
        let (r, c) = dims.split_once('x').ok_or_else(|| bad("dimensions must be RxC"))?;
        let rows: usize = r.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = c.parse().map_err(|_| bad("bad column count"))?;
        match dist {
            "uniform" => {
                let k = match params {
                    Some(p) => p.parse().map_err(|_| bad("bad nnz_per_row"))?,
                    None => cols.min(4),
                };
                Ok(Self::uniform(rows, cols, k))
            }
            "powerlaw" => {
                let (exponent, max_degree) = match params {
                    Some(p) => {
                        let (e, m) = p
                            .split_once(',')
                            .ok_or_else(|| bad("powerlaw params are exponent,max_degree"))?;
                        (
                            e.parse().map_err(|_| bad("bad exponent"))?,
                            m.parse().map_err(|_| bad("bad max_degree"))?,
                        )
                    }
                    None => (2.0, 64),
                };
                Ok(Self::power_law(rows, cols, exponent, max_degree))
            }
            other => Err(bad(&format!("unknown distribution '{other}'"))),
        }
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.distribution {
            Distribution::Uniform { nnz_per_row } => {
                write!(f, "uniform:{}x{}:{}", self.rows, self.cols, nnz_per_row)
            }
            Distribution::PowerLaw {
                exponent,
                max_degree,
            } => write!(
                f,
                "powerlaw:{}x{}:{},{}",
                self.rows, self.cols, exponent, max_degree
            ),
        }
    }
}

/// Generates a random CSR matrix with the requested row-length
/// distribution. Values are uniform in `[-1, 1)`; the output depends only on
/// `spec` and `seed`.
pub fn synth_matrix(spec: &SynthSpec, seed: u64) -> Result<CsrMatrix, FormatError> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(FormatError::InvalidSynth(
            "rows and cols must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degrees: Vec<usize> = match spec.distribution {
        Distribution::Uniform { nnz_per_row } => {
            if nnz_per_row > spec.cols {
                return Err(FormatError::InvalidSynth(format!(
                    "nnz_per_row {nnz_per_row} exceeds {} columns",
                    spec.cols
                )));
            }
            vec![nnz_per_row; spec.rows]
        }
        Distribution::PowerLaw {
            exponent,
            max_degree,
        } => {
            if !exponent.is_finite() || exponent <= 1.0 {
                return Err(FormatError::InvalidSynth(format!(
                    "power-law exponent must be > 1, got {exponent}"
                )));
            }
            if max_degree == 0 {
                return Err(FormatError::InvalidSynth("max_degree must be >= 1".into()));
            }
            let cap = max_degree.min(spec.cols);
            (0..spec.rows)
                .map(|_| {
                    // inverse CDF of a Pareto(x_min = 1) variable, floored
                    let u: f64 = 1.0 - rng.gen::<f64>();
                    let x = u.powf(-1.0 / (exponent - 1.0));
                    if x >= cap as f64 {
                        cap
                    } else {
                        x as usize
                    }
                })
                .collect()
        }
    };

    let mut offsets = Vec::with_capacity(spec.rows + 1);
    offsets.push(0);
    let total: usize = degrees.iter().sum();
    let mut indices = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for &d in &degrees {
        let mut cols = sample(&mut rng, spec.cols, d).into_vec();
        cols.sort_unstable();
        for c in cols {
            indices.push(c);
            values.push(rng.gen_range(-1.0..1.0));
        }
        offsets.push(indices.len());
    }
    Ok(CsrMatrix {
        rows: spec.rows,
        cols: spec.cols,
        offsets,
        indices,
        values,
    })
}
