//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Positional arguments restrict the run to criteria whose name
//! contains one of them; the rest are reported as SKIP.
//!
//! The training criteria (catch, pellets) take most of the time: roughly
//! an hour on one core.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lfd_cli::config::{Mode, RunConfig};
use lfd_cli::experiment::{self, Init, MethodRun, Pretrained};
use lfd_core::a3c::{a3c_losses, h, h_inv, n_step_targets, LossWeights, TargetMode, TbConfig};
use lfd_core::demo::{DemoDataset, ProportionalSampler};
use lfd_core::env::{make_game, Frame, GameConfig, GameId, WrappedEnv, WrapperConfig};
use lfd_core::eval::{auc_trapezoid, improvement_ratio, mean_curve, LearningCurve};
use lfd_core::gradcam::{
    frame_image, grid_image, importance_weights, overlay, saliency, CamMode, CamTarget, FrameCams, ModelTag, SaliencyMap,
};
use lfd_core::network::LayerSet;
use lfd_core::numeric::{log_softmax, softmax, ComputeGraph, GraphSpec, LayerSpec, ParamSet, Tensor};
use lfd_core::pretrain::classifier_loss;
use lfd_core::proxy::{record_proxy, HumanProxy};
use lfd_service::client::{play_script, sweep_script, KeyEvent, Playback};
use lfd_service::{EndReason, SessionConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- TB algebra

fn tb_operator() -> Outcome {
    let started = Instant::now();
    let eps = 1e-2;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let z: f64 = rng.random_range(-1e4..=1e4);
        let e = (h_inv(h(z, eps), eps) - z).abs() / z.abs().max(1.0);
        worst = worst.max(e);
    }
    let n = 1_000_000;
    let mut prev = h(-1e4, eps);
    let mut monotone = true;
    for i in 1..n {
        let z = -1e4 + 2e4 * i as f64 / (n - 1) as f64;
        let v = h(z, eps);
        monotone &= v > prev;
        prev = v;
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && monotone && secs < 1.0,
        format!("worst scaled round-trip error {worst:.2e}, monotone {monotone}, {secs:.3}s"),
    )
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-4;

fn micro(value: bool) -> GraphSpec {
    GraphSpec {
        input: [2, 7, 7],
        trunk: vec![
            LayerSpec::conv("conv1", 4, 3, 2),
            LayerSpec::conv("conv2", 3, 2, 1),
            LayerSpec::hidden("fc1", 16),
        ],
        policy: LayerSpec::head("fc2", 3),
        value: value.then(|| LayerSpec::head("fc3", 1)),
    }
}

/// Random biases keep pre-activations away from the ReLU kink.
fn random_graph(spec: GraphSpec, rng: &mut ChaCha8Rng) -> ComputeGraph<f64> {
    let mut g = ComputeGraph::<f64>::new(spec, rng).unwrap();
    for (name, t) in g.params_mut().iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    g
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let data = (0..n * 2 * 49).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[n, 2, 7, 7], data).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d < 1e-7 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

/// Central differences on every parameter; (count, worst relative error).
fn fd_check(
    graph: &ComputeGraph<f64>,
    analytic: &ParamSet<f64>,
    mut loss: impl FnMut(&mut ComputeGraph<f64>) -> f64,
) -> (usize, f64) {
    let (mut n, mut worst) = (0, 0.0f64);
    for slot in 0..graph.params().len() {
        for idx in 0..graph.params().at(slot).len() {
            let mut up = graph.clone();
            up.params_mut().at_mut(slot).data_mut()[idx] += FD_STEP;
            let mut down = graph.clone();
            down.params_mut().at_mut(slot).data_mut()[idx] -= FD_STEP;
            let numeric = (loss(&mut up) - loss(&mut down)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.at(slot).data()[idx], numeric));
            n += 1;
        }
    }
    (n, worst)
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    let mut graph = random_graph(micro(false), &mut rng);
    let x = random_batch(&mut rng, 5);
    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
    let l2 = 1e-2;
    let (_, grads) = classifier_loss(&mut graph, &x, &labels, l2).map_err(err)?;
    let (n_cls, worst_cls) = fd_check(&graph, &grads, |g| {
        let out = g.forward(&x).unwrap();
        let mut loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| log_softmax(out.logits.row(i))[y])
            .sum::<f64>()
            / labels.len() as f64;
        for (name, w) in g.params().iter() {
            if name.ends_with(".weight") {
                loss += l2 * w.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        loss
    });

    let mut graph = random_graph(micro(true), &mut rng);
    let x = random_batch(&mut rng, 6);
    let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w = LossWeights {
        entropy_beta: 0.05,
        value_coef: 0.5,
    };
    let loss = a3c_losses(&mut graph, &x, &actions, &targets, w).map_err(err)?;
    let adv = loss.advantages.clone();
    let (n_ac, worst_ac) = fd_check(&graph, &loss.grads, |g| {
        let out = g.forward(&x).unwrap();
        let v = out.value.unwrap();
        (0..actions.len())
            .map(|t| {
                let row = out.logits.row(t);
                let logp = log_softmax(row);
                let ent: f64 = -softmax(row).iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                -logp[actions[t]] * adv[t] - w.entropy_beta * ent + w.value_coef * (targets[t] - v.data()[t]).powi(2)
            })
            .sum()
    });

    let secs = started.elapsed().as_secs_f64();
    check(
        n_cls >= 300 && n_ac >= 300 && worst_cls < 1e-3 && worst_ac < 1e-3 && secs < 30.0,
        format!(
            "classifier {n_cls} params worst {worst_cls:.1e}; actor-critic {n_ac} params worst {worst_ac:.1e}; {secs:.1}s"
        ),
    )
}

// ---------------------------------------------------------------- n-step targets

/// `h^{-1}` by bisection, independent of the closed form.
fn h_inv_bisect(x: f64, eps: f64) -> f64 {
    let (mut lo, mut hi) = (-1e12, 1e12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid, eps) < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn clip_expansion(rewards: &[f64], boot: f64, gamma: f64, t: usize) -> f64 {
    let n = rewards.len();
    (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k].clamp(-1.0, 1.0)).sum::<f64>()
        + gamma.powi((n - t) as i32) * boot
}

fn tb_nested(rewards: &[f64], boot: f64, gamma: f64, eps: f64, t: usize) -> f64 {
    if t == rewards.len() {
        return boot;
    }
    h(rewards[t] + gamma * h_inv_bisect(tb_nested(rewards, boot, gamma, eps, t + 1), eps), eps)
}

fn n_step_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tb = TbConfig::default();
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let gamma = [0.0, 0.9, 0.99][i % 3];
        let n = rng.random_range(1..=20);
        let rewards: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                1 => rng.random_range(-1.0..1.0),
                _ => rng.random_range(-200.0..200.0),
            })
            .collect();
        let boot = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-30.0..30.0) };
        let clip = n_step_targets(&rewards, boot, gamma, TargetMode::Clip, &tb).map_err(err)?;
        let tbv = n_step_targets(&rewards, boot, gamma, TargetMode::Tb, &tb).map_err(err)?;
        for t in 0..n {
            let a = clip_expansion(&rewards, boot, gamma, t);
            worst.0 = worst.0.max((clip[t] - a).abs() / a.abs().max(1.0));
            let b = tb_nested(&rewards, boot, gamma, tb.epsilon, t);
            worst.1 = worst.1.max((tbv[t] - b).abs() / b.abs().max(1.0));
        }
    }
    check(
        worst.0 < 1e-6 && worst.1 < 1e-6,
        format!("1000 rollouts; worst clip error {:.1e}, tb error {:.1e}", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- metrics

fn metrics() -> Outcome {
    let auc = auc_trapezoid(&[10.0, 20.0, 30.0]).map_err(err)?;
    let ratio = improvement_ratio(131239.08, 78419.18).map_err(err)?;
    let shown = format!("{ratio:.2}%");
    check(auc == 40.0 && shown == "67.36%", format!("auc {auc}, improvement {shown}"))
}

// ---------------------------------------------------------------- sampler

fn sampler() -> Outcome {
    let labels: Vec<usize> = std::iter::repeat_n(0, 900).chain(std::iter::repeat_n(1, 100)).collect();
    let pool: Vec<usize> = (0..labels.len()).collect();
    let s = ProportionalSampler::new(&labels, 2, &pool).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let minority: usize = (0..1000)
        .map(|_| s.sample_batch(&mut rng, 32).iter().filter(|&&i| labels[i] == 1).count())
        .sum();
    let frac = minority as f64 / 32_000.0;
    check((frac - 0.10).abs() <= 0.02, format!("minority fraction {frac:.4}"))
}

// ---------------------------------------------------------------- training

fn catch_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.game = GameConfig::small(GameId::MiniCatch);
    c.a3c.workers = 8;
    c.a3c.step_budget = 500_000;
    c.a3c.eval_interval = 10_000;
    c.a3c.eval_steps = 2_000;
    c
}

fn determinism() -> Outcome {
    let mut c = catch_config();
    c.a3c.workers = 1;
    c.a3c.step_budget = 50_000;
    c.a3c.eval_interval = 10_000;
    c.a3c.eval_steps = 500;
    c.seeds = vec![7];
    let run = || experiment::run_method(&c, "a3c", Mode::A3c, Init::Random, None).map_err(err);
    let (a, b) = (run()?, run()?);
    let (ra, rb) = (&a.runs[0], &b.runs[0]);
    let bits = |c: &LearningCurve| c.scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    let same_curve = bits(&ra.curve) == bits(&rb.curve) && ra.curve.steps == rb.curve.steps;
    let same_params = ra
        .final_params
        .tensors()
        .zip(rb.final_params.tensors())
        .all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    check(
        same_curve && same_params && ra.error.is_none() && ra.curve.len() == 6,
        format!("curve {:?}, identical curve {same_curve}, identical parameters {same_params}", ra.curve.scores),
    )
}

/// Mean whole-game score of the scripted expert under the evaluation
/// wrapper.
fn expert_score(game: &GameConfig, wrapper: &WrapperConfig, games: usize) -> Result<f64, String> {
    let mut env = WrappedEnv::new(make_game(game).map_err(err)?, wrapper.for_evaluation(), 99).map_err(err)?;
    env.reset().map_err(err)?;
    let (mut scores, mut score) = (Vec::new(), 0.0);
    while scores.len() < games {
        let out = env.step(env.game().expert_action()).map_err(err)?;
        score += out.reward;
        if out.terminal {
            scores.push(score);
            score = 0.0;
            env.reset().map_err(err)?;
        }
    }
    Ok(scores.iter().sum::<f64>() / games as f64)
}

fn baseline_learns() -> Outcome {
    let mut c = catch_config();
    let optimal = expert_score(&c.game, &c.wrapper, 20)?;
    let target = 0.9 * optimal;
    c.seeds = vec![0, 1, 2];
    c.a3c.early_stop_score = Some(target);
    let run = experiment::run_method(&c, "a3c", Mode::A3c, Init::Random, None).map_err(err)?;
    let mut detail = format!("optimal {optimal:.2}, target {target:.2};");
    let mut reached = 0;
    for r in &run.runs {
        let best = r.curve.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hit = r.error.is_none() && best >= target && r.global_step <= c.a3c.step_budget;
        reached += hit as usize;
        detail += &format!(" seed {} best {best:.2} by step {}", r.seed, r.curve.steps.last().copied().unwrap_or(0));
    }
    detail += &format!("; {reached}/3 seeds");
    check(reached == 3, detail)
}

struct Stats {
    auc_mean: f64,
    final_mean: f64,
    final_std: f64,
}

fn stats(run: &MethodRun) -> Result<Stats, String> {
    let curves = run.curves();
    let (means, stds) = mean_curve(&curves).map_err(err)?;
    let aucs: Vec<f64> = curves.iter().map(|c| c.auc()).collect::<Result<_, _>>().map_err(err)?;
    Ok(Stats {
        auc_mean: aucs.iter().sum::<f64>() / aucs.len() as f64,
        final_mean: *means.last().ok_or("empty curve")?,
        final_std: *stds.last().ok_or("empty curve")?,
    })
}

/// Better on mean AUC, and either ≥10% AUC improvement or separated ±1 std
/// intervals at the last evaluation.
fn beats(better: &Stats, base: &Stats) -> (bool, f64) {
    let imp = improvement_ratio(better.auc_mean, base.auc_mean).unwrap_or(f64::NAN);
    let separated = better.final_mean - better.final_std > base.final_mean + base.final_std;
    (better.auc_mean > base.auc_mean && (imp >= 10.0 || separated), imp)
}

fn pellets_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.game = GameConfig::small(GameId::MiniPellets);
    c.seeds = vec![0, 1, 2];
    c.a3c.workers = 8;
    c.a3c.step_budget = 500_000;
    c.a3c.eval_interval = 10_000;
    c.a3c.eval_steps = 2_000;
    c.pretrain.iterations = 3_000;
    c.pretrain.eval_every = 500;
    c
}

fn pellets_pretrained(c: &RunConfig, dir: &std::path::Path) -> Result<(Pretrained, String), String> {
    let meta = record_proxy(&c.game, 10, &HumanProxy::default(), 100, dir).map_err(err)?;
    let ds = DemoDataset::load(dir).map_err(err)?;
    let outcome = experiment::pretrain(c, &ds).map_err(err)?;
    let note = format!(
        "demo: 10 games, {} steps, {} episodes, held-out accuracy {:.2}",
        meta.steps,
        ds.episodes().len(),
        outcome.heldout_accuracy.as_ref().map(|a| a.overall).unwrap_or(f64::NAN)
    );
    Ok((Pretrained::from_outcome(&outcome, c.game.id.as_str()), note))
}

fn central_claim(dir: &std::path::Path) -> Outcome {
    let c = pellets_config();
    let (pretrained, note) = pellets_pretrained(&c, dir)?;
    let runs = experiment::run_experiment(&c, &[Mode::A3c, Mode::A3cTb, Mode::Pmfa3cTb], Some(&pretrained))
        .map_err(err)?;
    let errors: Vec<String> = runs.iter().flat_map(|r| r.errors()).collect();
    if !errors.is_empty() {
        return Err(errors.join("; "));
    }
    let base = stats(&runs[0])?;
    let tb = stats(&runs[1])?;
    let pm = stats(&runs[2])?;
    let (pm_ok, pm_imp) = beats(&pm, &base);
    let (tb_ok, tb_imp) = beats(&tb, &base);
    let line = |name: &str, s: &Stats| {
        format!("{name} AUC {:.1} final {:.2}±{:.2}", s.auc_mean, s.final_mean, s.final_std)
    };
    check(
        pm_ok && tb_ok,
        format!(
            "{note}; {}; {} ({tb_imp:+.1}%); {} ({pm_imp:+.1}%)",
            line("a3c", &base),
            line("a3c_tb", &tb),
            line("pmfa3c_tb", &pm)
        ),
    )
}

fn ablation(dir: &std::path::Path) -> Outcome {
    let mut c = pellets_config();
    c.seeds = vec![0];
    c.a3c.step_budget = 20_000;
    c.a3c.eval_interval = 10_000;
    c.a3c.eval_steps = 300;
    c.pretrain.iterations = 300;
    let (pretrained, _) = pellets_pretrained(&c, dir)?;
    let runs = experiment::run_ablation(&c, Mode::Pmfa3cTb, &pretrained).map_err(err)?;
    let report = experiment::report(&c, &runs, "none").map_err(err)?;
    let summary = report.summary.ok_or("no comparative summary")?;
    let names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
    let all_sets = LayerSet::ABLATION.iter().all(|l| names.contains(&l.name()));
    let errors: Vec<String> = runs.iter().flat_map(|r| r.errors()).collect();
    let table = summary.table();
    check(
        all_sets && errors.is_empty() && LayerSet::ABLATION.len() == 5 && table.lines().count() > runs.len(),
        format!("methods {names:?}, errors {errors:?}"),
    )
}

// ---------------------------------------------------------------- Grad-CAM

/// input [1,3,3] → conv 2×2 stride 1 (2 channels, ReLU) → linear head.
fn cam_micro() -> ComputeGraph<f64> {
    let spec = GraphSpec {
        input: [1, 3, 3],
        trunk: vec![LayerSpec::conv("conv1", 2, 2, 1)],
        policy: LayerSpec::head("fc2", 2),
        value: None,
    };
    let mut g = ComputeGraph::<f64>::zeroed(spec).unwrap();
    let conv_w = [0.5, -0.25, 1.0, 0.75, -0.5, 0.25, 0.5, 1.0];
    let conv_b = [0.1, 0.2];
    let head_w = [
        0.3, -0.2, 0.5, 0.1, 0.4, 0.2, -0.1, 0.6, //
        -0.3, 0.2, 0.1, -0.4, 0.05, 0.7, 0.2, -0.2,
    ];
    let p = g.params_mut();
    p.get_mut("conv1.weight").unwrap().data_mut().copy_from_slice(&conv_w);
    p.get_mut("conv1.bias").unwrap().data_mut().copy_from_slice(&conv_b);
    p.get_mut("fc2.weight").unwrap().data_mut().copy_from_slice(&head_w);
    g
}

fn hand_saliency(x: &[f64; 9], action: usize) -> Vec<f64> {
    let conv_w = [[0.5, -0.25, 1.0, 0.75], [-0.5, 0.25, 0.5, 1.0]];
    let conv_b = [0.1, 0.2];
    let head_w = [
        [0.3, -0.2, 0.5, 0.1, 0.4, 0.2, -0.1, 0.6],
        [-0.3, 0.2, 0.1, -0.4, 0.05, 0.7, 0.2, -0.2],
    ];
    let mut maps = [[0.0; 4]; 2];
    for (k, map) in maps.iter_mut().enumerate() {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = conv_b[k];
                for ky in 0..2 {
                    for kx in 0..2 {
                        s += conv_w[k][ky * 2 + kx] * x[(oy + ky) * 3 + ox + kx];
                    }
                }
                map[oy * 2 + ox] = s.max(0.0);
            }
        }
    }
    // d logit / d map = head weight; alpha is its spatial mean.
    let alpha: Vec<f64> = (0..2).map(|k| head_w[action][k * 4..k * 4 + 4].iter().sum::<f64>() / 4.0).collect();
    let mut sum = [0.0; 4];
    for k in 0..2 {
        for i in 0..4 {
            sum[i] += alpha[k].max(0.0) * maps[k][i];
        }
    }
    let lo = sum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sum.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn gradcam_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dims = [4, 5, 5];
    let maps: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..2.0)).collect();

    let negative: Vec<f64> = (0..4).map(|_| -rng.random_range(0.1..1.0)).collect();
    let zero = saliency(&negative, &maps, dims, CamMode::RectifiedWeights).map_err(err)?.is_zero();

    let alpha: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = saliency(&alpha, &maps, dims, CamMode::RectifiedWeights).map_err(err)?;
    let mut scale_err = 0.0f64;
    for c in [1e-3, 0.5, 3.0, 1e4] {
        let scaled: Vec<f64> = alpha.iter().map(|a| a * c).collect();
        let s = saliency(&scaled, &maps, dims, CamMode::RectifiedWeights).map_err(err)?;
        scale_err = scale_err.max(s.values.iter().zip(&base.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let x = [0.2, 0.9, 0.1, 0.4, 0.0, 0.7, 0.8, 0.3, 0.6];
    let mut g = cam_micro();
    let state = Tensor::from_vec(&[1, 1, 3, 3], x.to_vec()).unwrap();
    let mut hand_err = 0.0f64;
    for action in 0..2 {
        let imp = importance_weights(&mut g, &state, action, CamTarget::Logit).map_err(err)?;
        let s = saliency(&imp.alpha, &imp.maps, imp.dims, CamMode::RectifiedWeights).map_err(err)?;
        let expect = hand_saliency(&x, action);
        hand_err = hand_err.max(s.values.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let grid_ok = grid_rows_in_order()?;
    check(
        zero && scale_err < 1e-12 && hand_err < 1e-6 && grid_ok,
        format!(
            "zero map {zero}, scale error {scale_err:.1e}, hand-check error {hand_err:.1e}, grid rows {:?}+frame {grid_ok}",
            ModelTag::ROWS.map(|t| t.name())
        ),
    )
}

/// Rows 0–2 are the random, pre-trained and final overlays, row 3 the frame.
fn grid_rows_in_order() -> Result<bool, String> {
    let frame = Frame::from_pixels(4, 4, (0..16).map(|i| (i * 15) as u8).collect()).map_err(err)?;
    let map = |hot: usize| {
        let mut m = SaliencyMap::zeros(2, 2);
        m.values[hot] = 1.0;
        m
    };
    let cams = [FrameCams {
        index: 0,
        actions: [0, 1, 2],
        maps: [map(0), map(1), map(3)],
    }];
    let grid = grid_image(&cams, std::slice::from_ref(&frame), 0.5).map_err(err)?;
    if grid.width() != 4 || grid.height() != 16 {
        return Ok(false);
    }
    let tiles = [
        overlay(&frame, &cams[0].maps[0], 0.5),
        overlay(&frame, &cams[0].maps[1], 0.5),
        overlay(&frame, &cams[0].maps[2], 0.5),
        frame_image(&frame),
    ];
    let rows_match = tiles.iter().enumerate().all(|(row, tile)| {
        (0..4).all(|y| (0..4).all(|x| grid.get_pixel(x, row as u32 * 4 + y) == tile.get_pixel(x, y)))
    });
    let order = ModelTag::ROWS == [ModelTag::Random, ModelTag::Pretrained, ModelTag::FinalRl];
    Ok(rows_match && order)
}

// ---------------------------------------------------------------- demo round trip

fn session(game: GameId, seed: u64, dir: &std::path::Path) -> SessionConfig {
    let mut c = SessionConfig::new(GameConfig::small(game), seed, dir);
    c.pinned_clock = Some(1_700_000_000);
    c
}

/// Windows rebuilt from the raw per-frame trace.
fn windows(p: &Playback) -> Vec<(usize, f64, bool, usize)> {
    let mut out = Vec::new();
    let (mut start, mut sum, mut n) = (0, 0.0, 0);
    for i in 0..p.raw_rewards.len() {
        if n == 0 {
            start = i;
        }
        sum += p.raw_rewards[i];
        n += 1;
        if n == 4 || p.raw_terminals[i] {
            out.push((start, sum, p.raw_terminals[i], p.raw_actions[start]));
            (sum, n) = (0.0, 0);
        }
    }
    if n > 0 {
        out.push((start, sum, false, p.raw_actions[start]));
    }
    out
}

fn demo_round_trip(root: &std::path::Path) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for game in GameId::ALL {
        let dir = root.join(game.as_str());
        let p = play_script("acceptance", session(game, 4, &dir), &sweep_script(3000, 11), 3000).map_err(err)?;
        let ds = DemoDataset::load(&dir).map_err(err)?;
        let expected = windows(&p);
        let reload = ds.len() == p.recorded.len() && (0..ds.len()).all(|i| ds.demo_step(i) == p.recorded[i]);
        let trace = ds.len() == expected.len()
            && expected.iter().enumerate().all(|(i, &(start, reward, terminal, action))| {
                let s = ds.demo_step(i);
                s.frame == p.screens[start] && s.reward == reward && s.terminal == terminal && s.action == action
            });
        let raw: f64 = p.raw_rewards.iter().sum();
        let kept: f64 = (0..ds.len()).map(|i| ds.demo_step(i).reward).sum();
        let frames = p.raw_rewards.len();
        let terminals = p.raw_terminals.iter().filter(|&&t| t).count();
        let count = ds.len() >= frames / 4 && ds.len() <= frames / 4 + terminals + 1;
        ok &= reload && trace && raw == kept && count;
        detail.push(format!("{game} {frames} frames → {} steps", ds.len()));
    }

    let dir = root.join("cap");
    let mut c = session(GameId::MiniCatch, 2, &dir);
    c.game.lives = Some(100_000);
    c.game.rounds = 100_000;
    let cap = c.frame_cap();
    let p = play_script("cap", c, &[KeyEvent::new(0, "ArrowLeft", true)], u64::MAX).map_err(err)?;
    let ds = DemoDataset::load(&dir).map_err(err)?;
    let capped = p.summary.reason == EndReason::TimeCap
        && p.raw_rewards.len() as u64 == cap
        && cap == 20 * 60 * 15
        && ds.meta.open_tail.as_deref() == Some("time_cap");
    ok &= capped;
    detail.push(format!("cap at {} simulated frames: {capped}", p.raw_rewards.len()));
    check(ok, detail.join(", "))
}

// ---------------------------------------------------------------- driver

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let scratch = tempfile::tempdir().expect("temporary directory");
    let root = scratch.path().to_path_buf();
    type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);
    let (r1, r2, r3) = (root.join("pellets"), root.join("ablation"), root.join("demos"));
    let criteria: Vec<Criterion> = vec![
        ("tb_operator", Box::new(tb_operator)),
        ("gradients", Box::new(gradients)),
        ("n_step_targets", Box::new(n_step_oracle)),
        ("metrics", Box::new(metrics)),
        ("proportional_sampler", Box::new(sampler)),
        ("deterministic_training", Box::new(determinism)),
        ("baseline_learns_catch", Box::new(baseline_learns)),
        ("central_claim_pellets", Box::new(move || central_claim(&r1))),
        ("ablation_layer_sets", Box::new(move || ablation(&r2))),
        ("gradcam_properties", Box::new(gradcam_properties)),
        ("demo_round_trip", Box::new(move || demo_round_trip(&r3))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            println!("SKIP {name}");
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
