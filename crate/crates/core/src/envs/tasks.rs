use crate::error::{Result, ZolError};

pub const DONUT_TASKS: [&str; 3] = ["square", "twocircles", "cross"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Square,
    TwoCircles,
    Cross,
    /// Indicator of a disc: `params = [gx, gy, radius]`.
    Goal,
    /// Table indexed by the hot coordinate of a one-hot state.
    Tabular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskReward {
    pub kind: TaskKind,
    pub params: Vec<f64>,
}

impl TaskReward {
    pub fn new(kind: TaskKind, params: Vec<f64>) -> Self {
        Self { kind, params }
    }

    /// One of the parameter-free donut tasks, or `goal` with its default disc.
    pub fn from_name(name: &str) -> Result<Self> {
        let kind = match name {
            "square" => TaskKind::Square,
            "twocircles" => TaskKind::TwoCircles,
            "cross" => TaskKind::Cross,
            "goal" => return Ok(Self::new(TaskKind::Goal, vec![1.0, 0.0, 0.2])),
            _ => {
                return Err(ZolError::Config(format!(
                    "unknown task `{name}`; valid tasks: square, twocircles, cross, goal"
                )))
            }
        };
        Ok(Self::new(kind, Vec::new()))
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TaskKind::Square => "square",
            TaskKind::TwoCircles => "twocircles",
            TaskKind::Cross => "cross",
            TaskKind::Goal => "goal",
            TaskKind::Tabular => "tabular",
        }
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self.kind {
            TaskKind::Square => {
                let inf = s[0].abs().max(s[1].abs());
                ind((0.6..=0.9).contains(&inf))
            }
            TaskKind::TwoCircles => {
                let right = (s[0] - 0.9).hypot(s[1]);
                let left = (s[0] + 0.9).hypot(s[1]);
                ind(right.min(left) <= 0.3)
            }
            TaskKind::Cross => ind(s[0].abs().min(s[1].abs()) <= 0.15),
            TaskKind::Goal => {
                let (gx, gy, rad) = (self.params[0], self.params[1], self.params[2]);
                ind((s[0] - gx).hypot(s[1] - gy) <= rad)
            }
            TaskKind::Tabular => {
                let idx = s
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0;
                self.params[idx]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_examples() {
        let cross = TaskReward::from_name("cross").unwrap();
        assert_eq!(cross.eval(&[0.8, 0.05]), 1.0);
        assert_eq!(cross.eval(&[0.8, 0.5]), 0.0);
        let square = TaskReward::from_name("square").unwrap();
        assert_eq!(square.eval(&[0.3, 0.3]), 0.0);
        assert_eq!(square.eval(&[0.7, -0.2]), 1.0);
        let two = TaskReward::from_name("twocircles").unwrap();
        assert_eq!(two.eval(&[0.9, 0.29]), 1.0);
        assert_eq!(two.eval(&[-0.9, -0.1]), 1.0);
        assert_eq!(two.eval(&[0.0, 0.9]), 0.0);
    }

    #[test]
    fn unknown_task_names_valid_ones() {
        let err = TaskReward::from_name("spiral").unwrap_err();
        assert!(matches!(err, ZolError::Config(ref m) if m.contains("cross")));
    }

    #[test]
    fn tabular_reads_hot_index() {
        let t = TaskReward::new(TaskKind::Tabular, vec![0.5, 2.0, -1.0]);
        assert_eq!(t.eval(&[0.0, 1.0, 0.0]), 2.0);
    }
}
