//! The search environment: a fixed-width window steered over a video
//! timeline by seven discrete actions.
//!
//! Rewards are the change in signed temporal IoU with the ground truth
//! minus a step penalty `beta * t`. Moves that would push the window past
//! either end of the video leave it where it is.

mod trace;

pub use trace::{Trace, TraceRecord};

use std::fmt;

use crate::error::{Error, Result};

/// Half-open frame interval `[start, end)` with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    start: usize,
    end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Invalid(format!("empty interval [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn start(self) -> usize {
        self.start
    }

    pub fn end(self) -> usize {
        self.end
    }

    pub fn len(self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(self) -> bool {
        false
    }

    fn shifted(self, delta: i64) -> Option<Self> {
        let s = self.start as i64 + delta;
        let e = self.end as i64 + delta;
        (s >= 0).then(|| Window {
            start: s as usize,
            end: e as usize,
        })
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Signed temporal IoU. Negative for disjoint intervals: the numerator is
/// minus the gap between them. Lies in `(-1, 1]` and is symmetric.
pub fn temporal_iou(a: Window, b: Window) -> f64 {
    let inter = a.end.min(b.end) as f64 - a.start.max(b.start) as f64;
    let hull = a.end.max(b.end) as f64 - a.start.min(b.start) as f64;
    inter / hull
}

/// IoU as used by evaluation metrics: `max(0, temporal_iou)`.
pub fn clamped_iou(a: Window, b: Window) -> f64 {
    temporal_iou(a, b).max(0.0)
}

/// `(iou_cur - iou_prev) - beta * t`.
pub fn shaped_reward(iou_prev: f64, iou_cur: f64, t: usize, beta: f64) -> f64 {
    (iou_cur - iou_prev) - beta * t as f64
}

/// The seven actions, in the order used by policy logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    BackJ = 0,
    BackH = 1,
    BackSec = 2,
    FwdSec = 3,
    FwdH = 4,
    FwdJ = 5,
    Terminate = 6,
}

pub const NUM_ACTIONS: usize = 7;

impl ActionKind {
    pub const ALL: [ActionKind; NUM_ACTIONS] = [
        ActionKind::BackJ,
        ActionKind::BackH,
        ActionKind::BackSec,
        ActionKind::FwdSec,
        ActionKind::FwdH,
        ActionKind::FwdJ,
        ActionKind::Terminate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::BackJ => "BACK_J",
            ActionKind::BackH => "BACK_H",
            ActionKind::BackSec => "BACK_SEC",
            ActionKind::FwdSec => "FWD_SEC",
            ActionKind::FwdH => "FWD_H",
            ActionKind::FwdJ => "FWD_J",
            ActionKind::Terminate => "TERMINATE",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Signed frame shift, `None` for Terminate.
    pub fn delta(self, off: &ActionOffsets) -> Option<i64> {
        let (h, j, sec) = (off.h as i64, off.j as i64, off.sec as i64);
        match self {
            ActionKind::BackJ => Some(-j),
            ActionKind::BackH => Some(-h),
            ActionKind::BackSec => Some(-sec),
            ActionKind::FwdSec => Some(sec),
            ActionKind::FwdH => Some(h),
            ActionKind::FwdJ => Some(j),
            ActionKind::Terminate => None,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Move sizes in frames for one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionOffsets {
    pub h: usize,
    pub j: usize,
    pub sec: usize,
}

/// `h = N/10`, `j = N/5`, `sec` = one second of frames; each floored (the
/// second rounded) and at least one frame.
pub fn action_offsets(n_frames: usize, fps: f64) -> Result<ActionOffsets> {
    if n_frames == 0 {
        return Err(Error::Invalid("video has no frames".into()));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
    }
    Ok(ActionOffsets {
        h: (n_frames / 10).max(1),
        j: (n_frames / 5).max(1),
        sec: (fps.round() as usize).max(1),
    })
}

/// Frame-level layout of a video: length, rate and feature unit size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timeline {
    pub frames: usize,
    pub fps: f64,
    pub unit_len: usize,
}

impl Timeline {
    pub fn num_units(&self) -> usize {
        self.frames.div_ceil(self.unit_len)
    }

    /// Feature units whose frame span intersects `w`.
    pub fn units_overlapping(&self, w: Window) -> std::ops::Range<usize> {
        let last = (w.end.min(self.frames).max(1) - 1) / self.unit_len;
        (w.start / self.unit_len)..(last + 1)
    }

    pub fn unit_frames(&self, unit: usize) -> usize {
        let s = unit * self.unit_len;
        (s + self.unit_len).min(self.frames).saturating_sub(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Window width X in frames.
    pub window: usize,
    /// Step cap; reaching it ends the episode as "forced".
    pub t_max: usize,
    pub beta: f64,
    /// Adds the final clamped IoU to the Terminate reward.
    pub terminal_reward: bool,
}

impl EnvConfig {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            t_max: 30,
            beta: 0.01,
            terminal_reward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub window: Window,
    pub t: usize,
    pub done: bool,
    pub forced: bool,
    pub gt: Window,
    observed: Vec<bool>,
}

impl EnvState {
    pub fn observed_units(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i))
    }

    pub fn is_observed(&self, unit: usize) -> bool {
        self.observed.get(unit).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub iou: f64,
}

/// One localization episode.
#[derive(Debug, Clone)]
pub struct Env {
    timeline: Timeline,
    offsets: ActionOffsets,
    config: EnvConfig,
    state: EnvState,
    iou: f64,
    truncated: bool,
    trace: Trace,
}

impl Env {
    /// Starts an episode with the window at `[0, min(X, N))`.
    pub fn new(timeline: Timeline, gt: Window, config: EnvConfig) -> Result<Self> {
        if timeline.frames == 0 {
            return Err(Error::Invalid("empty video".into()));
        }
        if timeline.unit_len == 0 {
            return Err(Error::Invalid("unit length must be at least one frame".into()));
        }
        if config.window == 0 {
            return Err(Error::Invalid("window width must be at least one frame".into()));
        }
        if config.t_max == 0 {
            return Err(Error::Invalid("t_max must be at least 1".into()));
        }
        if gt.end > timeline.frames {
            return Err(Error::Invalid(format!(
                "ground truth {gt} exceeds video length {}",
                timeline.frames
            )));
        }
        let offsets = action_offsets(timeline.frames, timeline.fps)?;
        let truncated = config.window > timeline.frames;
        let window = Window::new(0, config.window.min(timeline.frames))?;
        if truncated {
            log::debug!(
                "window width {} exceeds video length {}; truncated",
                config.window,
                timeline.frames
            );
        }
        let iou = temporal_iou(window, gt);
        let mut state = EnvState {
            window,
            t: 0,
            done: false,
            forced: false,
            gt,
            observed: vec![false; timeline.num_units()],
        };
        for u in timeline.units_overlapping(window) {
            state.observed[u] = true;
        }
        let trace = Trace {
            truncated,
            records: vec![TraceRecord {
                step: 0,
                action: None,
                window,
                iou,
                reward: 0.0,
            }],
        };
        Ok(Self {
            timeline,
            offsets,
            config,
            state,
            iou,
            truncated,
            trace,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn window(&self) -> Window {
        self.state.window
    }

    pub fn timeline(&self) -> Timeline {
        self.timeline
    }

    pub fn offsets(&self) -> ActionOffsets {
        self.offsets
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    /// Whether the initial window had to be cut down to the video length.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Signed IoU of the current window.
    pub fn iou(&self) -> f64 {
        self.iou
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Number of distinct frames covered by observed units.
    pub fn observed_frames(&self) -> usize {
        self.state
            .observed_units()
            .map(|u| self.timeline.unit_frames(u))
            .sum()
    }

    pub fn frames_used_fraction(&self) -> f64 {
        self.observed_frames() as f64 / self.timeline.frames as f64
    }

    pub fn step(&mut self, action: ActionKind) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::EpisodeDone);
        }
        self.state.t += 1;
        let t = self.state.t;
        let prev = self.iou;
        match action.delta(&self.offsets) {
            None => self.state.done = true,
            Some(d) => {
                if let Some(w) = self.state.window.shifted(d) {
                    if w.end <= self.timeline.frames {
                        self.state.window = w;
                        for u in self.timeline.units_overlapping(w) {
                            self.state.observed[u] = true;
                        }
                    }
                }
            }
        }
        self.iou = temporal_iou(self.state.window, self.state.gt);
        let mut reward = shaped_reward(prev, self.iou, t, self.config.beta);
        if action == ActionKind::Terminate && self.config.terminal_reward {
            reward += self.iou.max(0.0);
        }
        if !self.state.done && t >= self.config.t_max {
            self.state.done = true;
            self.state.forced = true;
        }
        self.trace.records.push(TraceRecord {
            step: t,
            action: Some(action),
            window: self.state.window,
            iou: self.iou,
            reward,
        });
        Ok(StepOutcome {
            reward,
            done: self.state.done,
            iou: self.iou,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: usize, e: usize) -> Window {
        Window::new(s, e).unwrap()
    }

    fn timeline(frames: usize) -> Timeline {
        Timeline {
            frames,
            fps: 24.0,
            unit_len: 1,
        }
    }

    #[test]
    fn iou_worked_examples() {
        assert_eq!(temporal_iou(w(0, 10), w(0, 10)), 1.0);
        assert!((temporal_iou(w(0, 10), w(5, 15)) - 1.0 / 3.0).abs() < 1e-12);
        assert!((temporal_iou(w(0, 10), w(20, 30)) + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(clamped_iou(w(0, 10), w(20, 30)), 0.0);
    }

    #[test]
    fn zero_length_interval_rejected() {
        assert!(Window::new(5, 5).is_err());
        assert!(Window::new(6, 5).is_err());
    }

    #[test]
    fn reward_examples() {
        assert!((shaped_reward(0.2, 0.5, 3, 0.01) - 0.27).abs() < 1e-12);
        assert!((shaped_reward(0.4, 0.4, 5, 0.01) + 0.05).abs() < 1e-12);
        assert_eq!(shaped_reward(0.4, 0.4, 5, 0.0), 0.0);
    }

    #[test]
    fn offsets_examples() {
        assert_eq!(action_offsets(1000, 24.0).unwrap(), ActionOffsets { h: 100, j: 200, sec: 24 });
        assert_eq!(action_offsets(7, 24.0).unwrap(), ActionOffsets { h: 1, j: 1, sec: 24 });
        let o = action_offsets(480, 24.0).unwrap();
        assert_eq!((o.h, o.j), (48, 96));
        assert!(action_offsets(0, 24.0).is_err());
        assert!(action_offsets(10, 0.0).is_err());
    }

    #[test]
    fn action_order_is_fixed() {
        for (i, a) in ActionKind::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(ActionKind::from_index(i), Some(*a));
            assert_eq!(ActionKind::from_name(a.name()), Some(*a));
        }
        assert_eq!(ActionKind::Terminate.index(), 6);
        assert_eq!(ActionKind::from_index(7), None);
    }

    #[test]
    fn init_window() {
        let env = Env::new(timeline(1000), w(300, 400), EnvConfig::new(160)).unwrap();
        assert_eq!(env.window(), w(0, 160));
        assert_eq!(env.state().t, 0);
        assert!(!env.truncated());
        let env = Env::new(timeline(100), w(30, 40), EnvConfig::new(160)).unwrap();
        assert_eq!(env.window(), w(0, 100));
        assert!(env.truncated() && env.trace().truncated);
    }

    #[test]
    fn empty_video_rejected() {
        assert!(Env::new(timeline(0), w(0, 1), EnvConfig::new(10)).is_err());
    }

    #[test]
    fn forward_jump_and_clamps() {
        let mut env = Env::new(timeline(1000), w(500, 580), EnvConfig::new(80)).unwrap();
        env.step(ActionKind::FwdJ).unwrap();
        assert_eq!(env.window(), w(200, 280));

        let mut env = Env::new(timeline(1000), w(500, 580), EnvConfig::new(80)).unwrap();
        env.step(ActionKind::BackH).unwrap();
        assert_eq!(env.window(), w(0, 80));

        let mut env = Env::new(timeline(1000), w(0, 80), EnvConfig::new(80)).unwrap();
        for _ in 0..4 {
            env.step(ActionKind::FwdJ).unwrap();
        }
        env.step(ActionKind::FwdSec).unwrap();
        env.step(ActionKind::FwdSec).unwrap();
        assert_eq!(env.window(), w(848, 928));
        env.step(ActionKind::FwdH).unwrap();
        // 848 + 100 would reach 1028 > 1000
        assert_eq!(env.window(), w(848, 928));
    }

    #[test]
    fn clamp_at_right_edge() {
        let mut env = Env::new(timeline(1000), w(0, 80), EnvConfig::new(80)).unwrap();
        env.state.window = w(920, 1000);
        env.step(ActionKind::FwdSec).unwrap();
        assert_eq!(env.window(), w(920, 1000));
    }

    #[test]
    fn clamped_move_reward_is_step_penalty() {
        let mut env = Env::new(timeline(1000), w(500, 580), EnvConfig::new(80)).unwrap();
        let r = env.step(ActionKind::BackJ).unwrap().reward;
        assert!((r + 0.01).abs() < 1e-12);
    }

    #[test]
    fn terminate_ends_episode() {
        let mut env = Env::new(timeline(1000), w(0, 160), EnvConfig::new(160)).unwrap();
        let out = env.step(ActionKind::Terminate).unwrap();
        assert!(out.done && !env.state().forced);
        assert_eq!(env.window(), w(0, 160));
        assert!((out.reward + 0.01).abs() < 1e-12);
        assert!(matches!(env.step(ActionKind::FwdH), Err(Error::EpisodeDone)));
        assert!((env.frames_used_fraction() - 0.16).abs() < 1e-12);
    }

    #[test]
    fn terminal_reward_flag() {
        let mut cfg = EnvConfig::new(160);
        cfg.terminal_reward = true;
        let mut env = Env::new(timeline(1000), w(0, 160), cfg).unwrap();
        let out = env.step(ActionKind::Terminate).unwrap();
        assert!((out.reward - (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn step_cap_forces_done() {
        let mut cfg = EnvConfig::new(80);
        cfg.t_max = 3;
        let mut env = Env::new(timeline(1000), w(500, 580), cfg).unwrap();
        for _ in 0..2 {
            assert!(!env.step(ActionKind::BackSec).unwrap().done);
        }
        assert!(env.step(ActionKind::BackSec).unwrap().done);
        assert!(env.state().forced);
        assert_eq!(env.window(), w(0, 80));
    }

    #[test]
    fn units_with_coarse_features() {
        let tl = Timeline {
            frames: 100,
            fps: 24.0,
            unit_len: 16,
        };
        assert_eq!(tl.num_units(), 7);
        assert_eq!(tl.units_overlapping(w(0, 16)), 0..1);
        assert_eq!(tl.units_overlapping(w(15, 17)), 0..2);
        assert_eq!(tl.units_overlapping(w(90, 100)), 5..7);
        assert_eq!(tl.unit_frames(6), 4);
        let env = Env::new(tl, w(0, 10), EnvConfig::new(20)).unwrap();
        // units 0 and 1 -> 32 frames
        assert_eq!(env.observed_frames(), 32);
    }
}
