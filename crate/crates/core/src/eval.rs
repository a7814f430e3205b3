//! Forecast metrics and the comparison report.

use serde::{Deserialize, Serialize};

use crate::burgers::FieldSeries;
use crate::error::{Error, Result};
use crate::fno::{Fno, FnoParams, HistoryWindow};
use crate::green::{build_propagator, ide_forecast, GammaParams};
use crate::likelihood::{forecast_distribution, prediction_interval, CovParams};
use crate::train::window_at;

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape(format!("{what}: no values")));
    }
    Ok(())
}

fn check_intervals(lower: &[f64], upper: &[f64]) -> Result<()> {
    same_len(lower, upper, "interval bounds")?;
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| !(l <= u)) {
        return Err(Error::Shape(format!(
            "interval {i} is inverted: [{}, {}]",
            lower[i], upper[i]
        )));
    }
    Ok(())
}

/// Mean squared prediction error over all aligned values.
pub fn mspe(truth: &[f64], forecast: &[f64]) -> Result<f64> {
    same_len(truth, forecast, "mspe")?;
    let sum: f64 = truth.iter().zip(forecast).map(|(t, f)| (t - f) * (t - f)).sum();
    Ok(sum / truth.len() as f64)
}

/// Fraction of `truth` values inside the closed intervals.
pub fn picp(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_intervals(lower, upper)?;
    same_len(truth, lower, "picp")?;
    let inside = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(inside as f64 / truth.len() as f64)
}

/// Mean interval width.
pub fn mpiw(lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_intervals(lower, upper)?;
    let sum: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).sum();
    Ok(sum / lower.len() as f64)
}

/// The newest frame, unchanged.
pub fn persistence_forecast(w: &HistoryWindow) -> Vec<f64> {
    w.last_frame().to_vec()
}

/// A trained FNO-DST model.
#[derive(Clone, Debug)]
pub struct FnoModel {
    pub name: String,
    pub net: Fno,
    pub theta: FnoParams,
    pub alpha: CovParams,
}

/// A forecasting method under evaluation.
#[derive(Clone, Debug)]
pub enum Forecaster {
    Fno(Box<FnoModel>),
    Persistence,
    /// Green's-function IDE with `gamma2` from the instance metadata and
    /// `gamma1` the spatial mean of the newest frame.
    Ide,
}

type Prediction = (Vec<f64>, Option<(Vec<f64>, Vec<f64>)>);

impl Forecaster {
    pub fn name(&self) -> String {
        match self {
            Forecaster::Fno(m) => m.name.clone(),
            Forecaster::Persistence => "Persistence".into(),
            Forecaster::Ide => "IDE".into(),
        }
    }

    /// History lag the method conditions on.
    pub fn tau(&self) -> usize {
        match self {
            Forecaster::Fno(m) => m.net.config().tau,
            _ => 0,
        }
    }

    fn predict(&self, series: &FieldSeries, k: usize, h: usize, level: f64) -> Result<Prediction> {
        let w = window_at(series, k, self.tau(), h)?;
        match self {
            Forecaster::Fno(m) => {
                let dist = forecast_distribution(&m.net, &w, &m.theta, &m.alpha, false)?;
                let bounds = prediction_interval(&dist, level)?;
                Ok((dist.mean, Some(bounds)))
            }
            Forecaster::Persistence => Ok((persistence_forecast(&w), None)),
            Forecaster::Ide => {
                let last = w.last_frame();
                let gamma1 = last.iter().sum::<f64>() / last.len() as f64;
                let p = GammaParams {
                    gamma1,
                    gamma2: series.gamma,
                };
                let prop = build_propagator(series.n, h as f64 * series.delta, p)?;
                Ok((ide_forecast(last, &prop)?, None))
            }
        }
    }
}

/// Which forecast origins `k` enter the metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origins {
    /// Every `k` forecastable by all compared models.
    All,
    /// Only the latest origin, `k = T - h`.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub mspe: f64,
    pub picp: Option<f64>,
    pub mpiw: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_instances: usize,
    pub n_windows: usize,
    pub n: usize,
    pub h: usize,
    pub origins: Vec<usize>,
    pub models: Vec<ModelMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.models.iter().map(|m| m.model.len()).max().unwrap_or(5).max(5);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
        let mut out = format!(
            "{:<width$}  {:>13}  {:>13}  {:>13}\n",
            "Model", "MSPE", "PICP", "MPIW"
        );
        for m in &self.models {
            out.push_str(&format!(
                "{:<width$}  {:>13}  {:>13}  {:>13}\n",
                m.model,
                fmt(Some(m.mspe)),
                m.picp.map_or("-".to_string(), |x| format!("{x:.4}")),
                fmt(m.mpiw)
            ));
        }
        out.push_str(&format!(
            "({} instances, {} windows, n = {}, h = {})\n",
            self.n_instances, self.n_windows, self.n, self.h
        ));
        out
    }
}

/// Forecasts stacked over (instance, origin) for one model.
pub struct Stacked {
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs `model` over every test instance and origin.
pub fn stack_forecasts(model: &Forecaster, series: &[FieldSeries], origins: &[usize], h: usize, level: f64) -> Result<Stacked> {
    let mut truth = Vec::new();
    let mut mean = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut has_bounds = None;
    for s in series {
        for &k in origins {
            let (m, b) = model.predict(s, k, h, level)?;
            truth.extend_from_slice(s.frame(k + h - 1));
            mean.extend(m);
            has_bounds = Some(b.is_some());
            if let Some((l, u)) = b {
                lower.extend(l);
                upper.extend(u);
            }
        }
    }
    Ok(Stacked {
        truth,
        mean,
        bounds: (has_bounds == Some(true)).then_some((lower, upper)),
    })
}

/// Origins shared by all models.
pub fn common_origins(models: &[Forecaster], t_len: usize, h: usize, which: Origins) -> Result<Vec<usize>> {
    let tau = models.iter().map(Forecaster::tau).max().unwrap_or(0);
    if t_len <= tau + h {
        return Err(Error::SeriesTooShort { t: t_len, needed: tau + h + 1 });
    }
    Ok(match which {
        Origins::All => (tau + 1..=t_len - h).collect(),
        Origins::Last => vec![t_len - h],
    })
}

/// MSPE for every model; PICP and MPIW of the `level` intervals for models
/// that produce them.
pub fn evaluate(
    models: &[Forecaster],
    test: &[FieldSeries],
    h: usize,
    which: Origins,
    level: f64,
) -> Result<MetricReport> {
    let first = test.first().ok_or_else(|| Error::Config("test split is empty".into()))?;
    if test.iter().any(|s| s.t_len() != first.t_len() || s.n != first.n) {
        return Err(Error::Shape("test series differ in length or grid".into()));
    }
    let origins = common_origins(models, first.t_len(), h, which)?;
    let mut rows = Vec::with_capacity(models.len());
    for model in models {
        let st = stack_forecasts(model, test, &origins, h, level)?;
        let (picp_v, mpiw_v) = match &st.bounds {
            Some((l, u)) => (Some(picp(&st.truth, l, u)?), Some(mpiw(l, u)?)),
            None => (None, None),
        };
        rows.push(ModelMetrics {
            model: model.name(),
            mspe: mspe(&st.truth, &st.mean)?,
            picp: picp_v,
            mpiw: mpiw_v,
        });
    }
    Ok(MetricReport {
        n_instances: test.len(),
        n_windows: test.len() * origins.len(),
        n: first.n,
        h,
        origins,
        models: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_metric_values() {
        let t = [0.5, -1.0, 2.0];
        assert_eq!(mspe(&t, &t).unwrap(), 0.0);
        assert_eq!(mspe(&[0.0; 4], &[3.0; 4]).unwrap(), 9.0);
        assert_eq!(picp(&t, &[-1e6; 3], &[1e6; 3]).unwrap(), 1.0);
        assert_eq!(picp(&t, &[5.0; 3], &[5.0; 3]).unwrap(), 0.0);
        assert_eq!(picp(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4], &[1.0; 4]).unwrap(), 0.5);
        assert_eq!(mpiw(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert_eq!(mpiw(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(mspe(&[1.0], &[1.0, 2.0]).is_err());
        assert!(picp(&[0.0], &[1.0], &[0.0]).is_err());
        assert!(mpiw(&[0.0, 1.0], &[1.0, f64::NAN]).is_err());
        assert!(mspe(&[], &[]).is_err());
    }
}
