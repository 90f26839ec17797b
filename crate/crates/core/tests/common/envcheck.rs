//! Random action scripts replayed through the environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tripnet::env::{ActionKind, Env, EnvConfig, Timeline, Window, NUM_ACTIONS};

pub struct Scenario {
    pub timeline: Timeline,
    pub gt: Window,
    pub config: EnvConfig,
    pub script: Vec<ActionKind>,
}

pub fn scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let frames = rng.random_range(1..400);
    let unit_len = rng.random_range(1..20);
    let fps = rng.random_range(5.0..60.0);
    let s = rng.random_range(0..frames);
    let e = rng.random_range(s + 1..=frames);
    let mut config = EnvConfig::new(rng.random_range(1..300));
    config.t_max = rng.random_range(1..40);
    config.beta = rng.random_range(0.0..0.05);
    let len = rng.random_range(1..45);
    // Terminate is rare so most scripts run long.
    let script = (0..len)
        .map(|_| {
            let i = if rng.random_bool(0.05) { 6 } else { rng.random_range(0..NUM_ACTIONS - 1) };
            ActionKind::from_index(i).unwrap()
        })
        .collect();
    Scenario {
        timeline: Timeline { frames, fps, unit_len },
        gt: Window::new(s, e).unwrap(),
        config,
        script,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub windows: Vec<Window>,
    pub rewards: Vec<f64>,
    pub observed: Vec<usize>,
    pub initial_iou: f64,
    pub final_iou: f64,
    pub forced: bool,
}

pub fn replay(sc: &Scenario) -> Replay {
    let mut env = Env::new(sc.timeline, sc.gt, sc.config).unwrap();
    let initial_iou = env.iou();
    let mut windows = vec![env.window()];
    let mut rewards = Vec::new();
    for &a in &sc.script {
        if env.is_done() {
            break;
        }
        rewards.push(env.step(a).unwrap().reward);
        windows.push(env.window());
    }
    Replay {
        windows,
        rewards,
        observed: env.state().observed_units().collect(),
        initial_iou,
        final_iou: env.iou(),
        forced: env.state().forced,
    }
}

/// Problems found over `n` random scripts; empty when all hold.
pub fn check_scripts(n: usize, seed: u64) -> (Vec<String>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::new();
    let mut worst_telescope = 0.0f64;
    for i in 0..n {
        let sc = scenario(&mut rng);
        let a = replay(&sc);
        let b = replay(&sc);
        if a != b {
            problems.push(format!("script {i}: replay differs"));
        }
        let width = sc.config.window.min(sc.timeline.frames);
        for w in &a.windows {
            if w.end() > sc.timeline.frames || w.len() != width {
                problems.push(format!("script {i}: window {w} for N={} X={}", sc.timeline.frames, sc.config.window));
            }
        }
        let t = a.rewards.len() as f64;
        let telescoped = a.final_iou - a.initial_iou - sc.config.beta * t * (t + 1.0) / 2.0;
        let sum: f64 = a.rewards.iter().sum();
        worst_telescope = worst_telescope.max((sum - telescoped).abs());
    }
    (problems, worst_telescope)
}

/// Units overlapping any visited window, computed directly from frames.
pub fn union_of_windows(timeline: Timeline, windows: &[Window]) -> Vec<usize> {
    let mut seen = vec![false; timeline.frames.div_ceil(timeline.unit_len)];
    for w in windows {
        for f in w.start()..w.end() {
            seen[f / timeline.unit_len] = true;
        }
    }
    seen.iter().enumerate().filter_map(|(i, &s)| s.then_some(i)).collect()
}
