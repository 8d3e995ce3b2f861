//! Weight presets: how the `N × m_s` weight matrix is filled from a data file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use shapekit::{MultiIndex, MultiIndexSet};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPreset {
    /// `w_0 = y`, every other weight zero.
    Level,
    /// `w_0 = y`, first-order weights from the `w_` columns, higher orders zero.
    SignalGrad,
    /// Every weight column read from the file.
    Custom,
}

impl fmt::Display for WeightPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightPreset::Level => "level",
            WeightPreset::SignalGrad => "signal_grad",
            WeightPreset::Custom => "custom",
        })
    }
}

impl FromStr for WeightPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "level" => Ok(WeightPreset::Level),
            "signal_grad" => Ok(WeightPreset::SignalGrad),
            "custom" => Ok(WeightPreset::Custom),
            _ => Err(format!("unknown weight preset '{s}' (level|signal_grad|custom)")),
        }
    }
}

impl WeightPreset {
    /// Full weight matrix, one column per multi-index of `set`.
    pub fn weights(
        self,
        set: &MultiIndexSet,
        n: usize,
        y: Option<&DVector<f64>>,
        columns: &BTreeMap<MultiIndex, DVector<f64>>,
    ) -> CliResult<DMatrix<f64>> {
        for mi in columns.keys() {
            if set.position(mi).is_none() {
                return Err(CliError::input(format!(
                    "column w_{mi} does not match any multi-index with d = {} and s = {}",
                    set.d(),
                    set.s()
                )));
            }
        }
        let mut w = DMatrix::zeros(n, set.m_s());
        let need_y = || y.ok_or_else(|| CliError::input(format!("weights.preset = {self} needs a 'y' column")));
        match self {
            WeightPreset::Level => {
                if let Some(mi) = columns.keys().next() {
                    return Err(CliError::input(format!("column w_{mi} is not used by weights.preset = level")));
                }
                w.set_column(0, need_y()?);
            }
            WeightPreset::SignalGrad => {
                w.set_column(0, need_y()?);
                for (a, mi) in set.indices().iter().enumerate() {
                    match (mi.order(), columns.get(mi)) {
                        (1, Some(col)) => w.set_column(a, col),
                        (1, None) => return Err(CliError::input(format!("missing weight column w_{mi}"))),
                        (_, Some(_)) => {
                            return Err(CliError::input(format!(
                                "column w_{mi} is not used by weights.preset = signal_grad (first-order only)"
                            )))
                        }
                        _ => {}
                    }
                }
            }
            WeightPreset::Custom => {
                for (a, mi) in set.indices().iter().enumerate() {
                    let col = columns.get(mi).ok_or_else(|| CliError::input(format!("missing weight column w_{mi}")))?;
                    w.set_column(a, col);
                }
            }
        }
        Ok(w)
    }
}
