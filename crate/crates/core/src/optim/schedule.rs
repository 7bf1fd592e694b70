//! Piecewise learning-rate schedule: triangular cycles, then a constant tail.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseMode {
    /// Linear ramp `lr_min → lr_max → lr_min`; each ramp lasts the
    /// schedule's half-cycle.
    Triangular,
    /// Always `lr_max` (which equals `lr_min`).
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    /// First and last epoch covered, 1-based and inclusive.
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub mode: PhaseMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    phases: Vec<Phase>,
    /// Length of one ramp, in epochs.
    half_cycle_epochs: usize,
}

impl LrSchedule {
    pub fn new(phases: Vec<Phase>, half_cycle_epochs: usize) -> Result<Self> {
        if phases.is_empty() || half_cycle_epochs == 0 {
            return Err(Error::invalid("schedule needs at least one phase and a positive half-cycle"));
        }
        let mut next = 1;
        for (i, p) in phases.iter().enumerate() {
            if p.start_epoch != next || p.end_epoch < p.start_epoch {
                return Err(Error::invalid(format!(
                    "phase {} covers epochs {}..={}, expected to start at {next}",
                    i + 1,
                    p.start_epoch,
                    p.end_epoch
                )));
            }
            let bounds_ok = p.lr_min > 0.0 && p.lr_min.is_finite() && p.lr_max.is_finite() && p.lr_min <= p.lr_max;
            if !bounds_ok || (p.mode == PhaseMode::Constant && p.lr_min != p.lr_max) {
                return Err(Error::invalid(format!(
                    "phase {} has learning-rate bounds [{}, {}]",
                    i + 1,
                    p.lr_min,
                    p.lr_max
                )));
            }
            next = p.end_epoch + 1;
        }
        Ok(LrSchedule {
            phases,
            half_cycle_epochs,
        })
    }

    /// The 50-epoch schedule: cycles in [5e-4, 9.8e-4] for epochs 1-25, in
    /// [1e-4, 4e-4] for 26-45, then 4e-5 for the last five.
    pub fn standard() -> Self {
        Self::three_phase(25, 45, 50).expect("valid boundaries")
    }

    /// The same three phases compressed to `total_epochs`: the first cycling
    /// phase takes half the epochs and the constant tail keeps its five.
    pub fn standard_scaled(total_epochs: usize) -> Result<Self> {
        if total_epochs < 7 {
            return Err(Error::invalid(format!(
                "a three-phase schedule needs at least 7 epochs, got {total_epochs}"
            )));
        }
        let p1_end = total_epochs / 2;
        let p2_end = total_epochs - 5;
        Self::three_phase(p1_end.min(p2_end - 1), p2_end, total_epochs)
    }

    /// Three phases with the standard learning-rate ranges.
    pub fn three_phase(p1_end: usize, p2_end: usize, total: usize) -> Result<Self> {
        Self::new(
            vec![
                Phase {
                    start_epoch: 1,
                    end_epoch: p1_end,
                    lr_min: 5e-4,
                    lr_max: 9.8e-4,
                    mode: PhaseMode::Triangular,
                },
                Phase {
                    start_epoch: p1_end + 1,
                    end_epoch: p2_end,
                    lr_min: 1e-4,
                    lr_max: 4e-4,
                    mode: PhaseMode::Triangular,
                },
                Phase {
                    start_epoch: p2_end + 1,
                    end_epoch: total,
                    lr_min: 4e-5,
                    lr_max: 4e-5,
                    mode: PhaseMode::Constant,
                },
            ],
            2,
        )
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn half_cycle_epochs(&self) -> usize {
        self.half_cycle_epochs
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.last().map_or(0, |p| p.end_epoch)
    }

    /// 1-based index of the phase containing `epoch`.
    pub fn phase_index(&self, epoch: usize) -> Result<usize> {
        self.phases
            .iter()
            .position(|p| (p.start_epoch..=p.end_epoch).contains(&epoch))
            .map(|i| i + 1)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "epoch {epoch} outside the schedule's 1..={}",
                    self.total_epochs()
                ))
            })
    }

    /// Learning rate for iteration `iteration` (0-based) of `epoch` (1-based).
    /// Cycles restart at each phase boundary, so the first iteration of a
    /// cycling phase gets `lr_min` and the iteration one half-cycle in gets
    /// `lr_max`.
    pub fn lr_at(&self, epoch: usize, iteration: usize, iterations_per_epoch: usize) -> Result<f64> {
        if iterations_per_epoch == 0 || iteration >= iterations_per_epoch {
            return Err(Error::invalid(format!(
                "iteration {iteration} of an epoch with {iterations_per_epoch} iterations"
            )));
        }
        let phase = &self.phases[self.phase_index(epoch)? - 1];
        match phase.mode {
            PhaseMode::Constant => Ok(phase.lr_max),
            PhaseMode::Triangular => {
                let half = self.half_cycle_epochs * iterations_per_epoch;
                let pos = ((epoch - phase.start_epoch) * iterations_per_epoch + iteration) % (2 * half);
                let up = if pos <= half { pos } else { 2 * half - pos };
                let f = up as f64 / half as f64;
                let lr = phase.lr_min * (1.0 - f) + phase.lr_max * f;
                Ok(lr.clamp(phase.lr_min, phase.lr_max))
            }
        }
    }
}
