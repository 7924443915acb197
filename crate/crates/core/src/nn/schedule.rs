//! Learning-rate plateau halving and early stopping on validation accuracy.
//!
//! An epoch counts as an improvement only when it strictly beats the best
//! accuracy seen so far. Halving the learning rate resets the plateau counter
//! but not the early-stopping counter.

#[derive(Debug, Clone)]
pub struct PlateauHalver {
    pub window: usize,
    best: Option<f64>,
    stalled: usize,
}

impl PlateauHalver {
    pub fn new(window: usize) -> Self {
        PlateauHalver {
            window: window.max(1),
            best: None,
            stalled: 0,
        }
    }

    /// Records one epoch and returns the learning rate for the next one.
    pub fn observe(&mut self, accuracy: f64, lr: f64) -> f64 {
        if self.best.map_or(true, |b| accuracy > b) {
            self.best = Some(accuracy);
            self.stalled = 0;
            return lr;
        }
        self.stalled += 1;
        if self.stalled >= self.window {
            self.stalled = 0;
            lr / 2.0
        } else {
            lr
        }
    }
}

/// Learning rate after replaying `history` from `initial_lr`.
pub fn plateau_lr(history: &[f64], initial_lr: f64, window: usize) -> f64 {
    let mut halver = PlateauHalver::new(window);
    history.iter().fold(initial_lr, |lr, &a| halver.observe(a, lr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            seen: 0,
        }
    }

    /// Records one epoch; `Stop` once `patience` epochs in a row failed to
    /// beat the best.
    pub fn observe(&mut self, accuracy: f64) -> StopDecision {
        self.seen += 1;
        if self.best.map_or(true, |b| accuracy > b) {
            self.best = Some(accuracy);
            self.best_epoch = self.seen;
        }
        if self.seen - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// 1-based epoch of the best accuracy so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|_| self.best_epoch)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// True when the last observed epoch set a new best.
    pub fn improved_last(&self) -> bool {
        self.seen > 0 && self.best_epoch == self.seen
    }
}

pub fn early_stop(history: &[f64], patience: usize) -> StopDecision {
    let mut stopper = EarlyStopper::new(patience);
    let mut decision = StopDecision::Continue;
    for &a in history {
        decision = stopper.observe(a);
    }
    decision
}
