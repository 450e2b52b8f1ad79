//! Offline replay of a recorded factor/observation trace through the filter.
//!
//! Input CSV columns: `t,performance,safety,env_workload,supervision_workload,ac,ac_prev,h`.
//! `ac`/`ac_prev` are empty outside reallocation epochs and `h` is empty when no
//! human answer was recorded. The first row is the baseline: it is reported
//! against the prior and is not filtered. Every later row drives one update.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{filter_step, HumanObservation, Influence, TrustBelief, TrustError, TrustFactors, TrustParams};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error(transparent)]
    Trust(#[from] TrustError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub performance: f64,
    pub safety: f64,
    pub env_workload: f64,
    pub supervision_workload: f64,
    pub ac: Option<f64>,
    pub ac_prev: Option<f64>,
    pub h: Option<u8>,
}

impl TraceRow {
    fn factors(&self, row: usize) -> Result<TrustFactors, TraceError> {
        let influence = match (self.ac, self.ac_prev) {
            (None, None) => None,
            (Some(current), previous) => Some(Influence {
                current,
                previous: previous.unwrap_or(0.0),
            }),
            (None, Some(_)) => {
                return Err(TraceError::Row {
                    row,
                    msg: "ac_prev given without ac".into(),
                })
            }
        };
        Ok(TrustFactors {
            performance: self.performance,
            safety: self.safety,
            env_workload: self.env_workload,
            supervision_workload: self.supervision_workload,
            influence,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSummary {
    pub t: u64,
    pub mean: f64,
    pub variance: f64,
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let rows = rdr.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
    if rows.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(rows)
}

pub fn replay(rows: &[TraceRow], params: &TrustParams) -> Result<Vec<BeliefSummary>, TraceError> {
    params.validate()?;
    let first = rows.first().ok_or(TraceError::Empty)?;
    let mut bel = TrustBelief::from_prior(&params.prior, params.bins);
    let mut prev = first.factors(0)?;
    let mut out = vec![BeliefSummary {
        t: first.t,
        mean: bel.mean(),
        variance: bel.variance(),
    }];
    for (i, row) in rows.iter().enumerate().skip(1) {
        let now = row.factors(i)?;
        let obs = match row.h {
            None => None,
            Some(h @ (0 | 1)) => Some(HumanObservation {
                robot: "trace".into(),
                time: row.t,
                allow: h == 1,
            }),
            Some(other) => {
                return Err(TraceError::Row {
                    row: i,
                    msg: format!("h must be 0 or 1, got {other}"),
                })
            }
        };
        bel = filter_step(&bel, &now, &prev, obs.as_ref(), params)?;
        out.push(BeliefSummary {
            t: row.t,
            mean: bel.mean(),
            variance: bel.variance(),
        });
        prev = now;
    }
    Ok(out)
}

pub fn write_summaries<W: Write>(out: W, rows: &[BeliefSummary]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
