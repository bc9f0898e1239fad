//! Policy evaluation and the learning-curve metrics: best reward, final
//! performance, trapezoidal area under the curve and improvement ratio.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::a3c::sample_action;
use crate::env::WrappedEnv;
use crate::error::{Error, Result};
use crate::numeric::ComputeGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Total score over completed episodes plus any partial episode, divided
    /// by the number of completed episodes (at least 1).
    pub mean_score: f64,
    pub episodes: u64,
    pub total_score: f64,
    pub steps: u64,
}

/// Plays whole games with actions sampled from the policy until `test_steps`
/// agent steps are used. Scores are raw game rewards.
pub fn evaluate_policy<R: Rng + ?Sized>(
    graph: &mut ComputeGraph,
    env: &mut WrappedEnv,
    test_steps: u64,
    rng: &mut R,
) -> Result<EvalResult> {
    if test_steps == 0 {
        return Err(Error::input("evaluation needs at least one step"));
    }
    let mut obs = env.reset()?;
    let (mut total, mut episodes) = (0.0, 0u64);
    for _ in 0..test_steps {
        let out = graph.forward(&obs)?;
        let action = sample_action(out.logits.row(0), rng);
        let step = env.step(action)?;
        total += step.reward;
        obs = if step.game_over || step.truncated {
            episodes += 1;
            env.reset()?
        } else if step.terminal {
            env.reset()?
        } else {
            step.observation
        };
    }
    Ok(EvalResult {
        mean_score: total / episodes.max(1) as f64,
        episodes,
        total_score: total,
        steps: test_steps,
    })
}

/// Scores of one trial at uniformly spaced training steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub interval: u64,
    pub steps: Vec<u64>,
    pub scores: Vec<f64>,
}

impl LearningCurve {
    pub fn new(interval: u64) -> Self {
        LearningCurve {
            interval,
            steps: Vec::new(),
            scores: Vec::new(),
        }
    }

    /// Curve at steps `0, interval, 2 * interval, ...`.
    pub fn from_scores(interval: u64, scores: Vec<f64>) -> Self {
        LearningCurve {
            interval,
            steps: (0..scores.len() as u64).map(|i| i * interval).collect(),
            scores,
        }
    }

    pub fn push(&mut self, step: u64, score: f64) -> Result<()> {
        if let Some(&last) = self.steps.last() {
            if step != last + self.interval {
                return Err(Error::input(format!(
                    "curve point at step {step} does not follow {last} by {}",
                    self.interval
                )));
            }
        }
        self.steps.push(step);
        self.scores.push(score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.scores.len() {
            return Err(Error::input("curve steps and scores differ in length"));
        }
        for w in self.steps.windows(2) {
            if w[1] != w[0] + self.interval || self.interval == 0 {
                return Err(Error::input(format!("curve steps {} -> {} are not uniform", w[0], w[1])));
            }
        }
        Ok(())
    }

    pub fn auc(&self) -> Result<f64> {
        auc_trapezoid(&self.scores)
    }
}

/// Trapezoidal area under a curve with the spacing scaled to 1.
pub fn auc_trapezoid(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::input(format!("AUC needs at least 2 points, got {}", scores.len())));
    }
    Ok(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum())
}

/// `(auc_pre - auc_base) / auc_base * 100`.
pub fn improvement_ratio(auc_pre: f64, auc_base: f64) -> Result<f64> {
    if auc_base == 0.0 {
        return Err(Error::input("improvement ratio against a zero baseline"));
    }
    Ok((auc_pre - auc_base) / auc_base * 100.0)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pointwise mean and (population) standard deviation across trials.
pub fn mean_curve(curves: &[LearningCurve]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = curves.first().ok_or_else(|| Error::input("no curves"))?;
    for c in curves {
        c.validate()?;
        if c.steps != first.steps {
            return Err(Error::input("curves are not on the same step grid"));
        }
    }
    let (mut means, mut stds) = (Vec::new(), Vec::new());
    for i in 0..first.len() {
        let column: Vec<f64> = curves.iter().map(|c| c.scores[i]).collect();
        let (m, s) = mean_std(&column);
        means.push(m);
        stds.push(s);
    }
    Ok((means, stds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub best_reward: f64,
    pub final_mean: f64,
    pub final_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Percent change of the mean AUC over the baseline's.
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: String,
    pub interval: u64,
    pub points: usize,
    pub methods: Vec<MethodSummary>,
}

/// The four metrics per method; improvement is relative to `baseline`.
pub fn summarize(methods: &[(String, Vec<LearningCurve>)], baseline: &str) -> Result<ExperimentReport> {
    let grid = methods
        .first()
        .and_then(|(_, c)| c.first())
        .ok_or_else(|| Error::input("no curves to summarize"))?;
    let mut out = Vec::new();
    for (name, curves) in methods {
        let (means, _) = mean_curve(curves)?;
        if curves[0].steps != grid.steps {
            return Err(Error::input(format!("{name}: curve grid differs from the other methods")));
        }
        let aucs = curves.iter().map(|c| c.auc()).collect::<Result<Vec<_>>>()?;
        let (auc_mean, auc_std) = mean_std(&aucs);
        let finals: Vec<f64> = curves.iter().map(|c| *c.scores.last().expect("non-empty")).collect();
        let (final_mean, final_std) = mean_std(&finals);
        out.push(MethodSummary {
            method: name.clone(),
            trials: curves.len(),
            best_reward: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            final_mean,
            final_std,
            auc_mean,
            auc_std,
            improvement: None,
        });
    }
    let base = out
        .iter()
        .find(|m| m.method == baseline)
        .map(|m| m.auc_mean)
        .ok_or_else(|| Error::input(format!("baseline `{baseline}` not among the methods")))?;
    for m in &mut out {
        m.improvement = if m.method == baseline {
            None
        } else {
            Some(improvement_ratio(m.auc_mean, base)?)
        };
    }
    Ok(ExperimentReport {
        baseline: baseline.to_string(),
        interval: grid.interval,
        points: grid.len(),
        methods: out,
    })
}

impl ExperimentReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>22} {:>24} {:>12}",
            "method", "best reward", "final performance", "total reward (AUC)", "improvement"
        );
        for m in &self.methods {
            let imp = m.improvement.map_or_else(|| "-".to_string(), |v| format!("{v:.2}%"));
            let _ = writeln!(
                s,
                "{:<14} {:>12.2} {:>22} {:>24} {:>12}",
                m.method,
                m.best_reward,
                format!("{:.2}±{:.2}", m.final_mean, m.final_std),
                format!("{:.2}±{:.2}", m.auc_mean, m.auc_std),
                imp
            );
        }
        s
    }
}

/// `step,mean_score,std_score,trial_0,...` for curves on a shared grid.
pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[LearningCurve]) -> Result<()> {
    let (means, stds) = mean_curve(curves)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "step,mean_score,std_score")?;
    for i in 0..curves.len() {
        write!(f, ",trial_{i}")?;
    }
    writeln!(f)?;
    for (i, step) in curves[0].steps.iter().enumerate() {
        write!(f, "{step},{},{}", means[i], stds[i])?;
        for c in curves {
            write!(f, ",{}", c.scores[i])?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a curve written by [`write_curves_csv`], taking `trial_<index>`.
pub fn read_curve_csv(path: impl AsRef<Path>, trial: usize) -> Result<LearningCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == format!("trial_{trial}"))
        .ok_or_else(|| Error::Format(format!("no trial_{trial} column")))?;
    let (mut steps, mut scores) = (Vec::new(), Vec::new());
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad curve row `{line}`")))
        };
        steps.push(parse(0)? as u64);
        scores.push(parse(col)?);
    }
    let interval = if steps.len() >= 2 { steps[1] - steps[0] } else { 1 };
    let curve = LearningCurve {
        interval,
        steps,
        scores,
    };
    curve.validate()?;
    Ok(curve)
}
