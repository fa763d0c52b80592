//! Sampled trajectories, their event log and the CSV exchange format.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{OCProblem, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Activate,
    Deactivate,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Activate => "activate",
            EventKind::Deactivate => "deactivate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Event {
    pub time: f64,
    pub constraint: usize,
    pub kind: EventKind,
}

/// Sampled `(t, x, u)` with activity labels and located events.
///
/// `inputs[k]` is the left limit `u(t_k⁻)` (the input applied on the step that
/// ends at `t_k`; at `t_0` the initial input). `inputs_after[k]` is the right
/// limit `u(t_k⁺)` applied on the following step. The two differ only where
/// the input jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<f64>,
    pub inputs_after: Vec<f64>,
    pub active: Vec<Option<usize>>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_f(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    /// `φ(x(t_f)) + ∫ l(x) dt` with the trapezoidal rule on the sample grid.
    pub fn objective(&self, problem: &OCProblem) -> f64 {
        let mut running = 0.0;
        if problem.stage_cost.is_some() {
            for k in 1..self.len() {
                let h = self.times[k] - self.times[k - 1];
                running += 0.5
                    * h
                    * (problem.stage_cost_value(&self.states[k - 1])
                        + problem.stage_cost_value(&self.states[k]));
            }
        }
        problem.phi.value(self.final_state()) + running
    }

    /// Index of the sample closest to `t`.
    pub fn sample_at(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i >= self.len() {
            self.len() - 1
        } else if (self.times[i] - t).abs() <= (t - self.times[i - 1]).abs() {
            i
        } else {
            i - 1
        }
    }

    /// Sample indices that carry a logged event.
    pub fn event_samples(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.events.iter().map(|e| self.sample_at(e.time)).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// CSV with header `t,u,active,x1..xn,s1..sm`. `s_i` is the raw value of
    /// constraint `i` at the left-limit input (`h` for pure-state
    /// constraints). Events and input jumps follow as comment lines.
    pub fn to_csv(&self, problem: &OCProblem) -> String {
        let n = self.state_dim();
        let m = problem.constraints.len();
        let mut out = String::from("t,u,active");
        for j in 1..=n {
            let _ = write!(out, ",x{j}");
        }
        for i in 1..=m {
            let _ = write!(out, ",s{i}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let x = &self.states[k];
            let u = self.inputs[k];
            let active = self.active[k].map_or(-1, |i| i as i64);
            let _ = write!(out, "{:.16e},{:.16e},{}", self.times[k], u, active);
            for v in x.iter() {
                let _ = write!(out, ",{v:.16e}");
            }
            for c in &problem.constraints {
                let _ = write!(out, ",{:.16e}", c.value(x, u));
            }
            out.push('\n');
        }
        for e in &self.events {
            let _ = writeln!(
                out,
                "# event,{:.16e},{},{}",
                e.time,
                e.constraint,
                e.kind.as_str()
            );
        }
        for k in 0..self.len() {
            if self.inputs_after[k].to_bits() != self.inputs[k].to_bits() {
                let _ = writeln!(out, "# right_limit,{},{:.16e}", k, self.inputs_after[k]);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "u" || cols[2] != "active" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            inputs_after: Vec::new(),
            active: Vec::new(),
            events: Vec::new(),
        };
        let mut right_limits = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2;
            if let Some(comment) = line.strip_prefix('#') {
                let fields: Vec<&str> = comment.trim().split(',').map(str::trim).collect();
                match fields.first().copied() {
                    Some("event") if fields.len() == 4 => {
                        let kind = match fields[3] {
                            "activate" => EventKind::Activate,
                            "deactivate" => EventKind::Deactivate,
                            other => {
                                return Err(Error::Parse(format!(
                                    "line {lineno}: unknown event kind `{other}`"
                                )))
                            }
                        };
                        traj.events.push(Event {
                            time: parse_f64(fields[1], lineno)?,
                            constraint: parse_usize(fields[2], lineno)?,
                            kind,
                        });
                    }
                    Some("right_limit") if fields.len() == 3 => {
                        right_limits.push((parse_usize(fields[1], lineno)?, parse_f64(fields[2], lineno)?));
                    }
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!(
                    "line {lineno}: expected {} fields, found {}",
                    cols.len(),
                    fields.len()
                )));
            }
            let t = parse_f64(fields[0], lineno)?;
            let u = parse_f64(fields[1], lineno)?;
            let active: i64 = fields[2]
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad active index")))?;
            let x = fields[3..3 + n]
                .iter()
                .map(|f| parse_f64(f, lineno))
                .collect::<Result<Vec<_>>>()?;
            traj.times.push(t);
            traj.inputs.push(u);
            traj.inputs_after.push(u);
            traj.active.push(usize::try_from(active).ok());
            traj.states.push(Vector::from_vec(x));
        }
        if traj.is_empty() {
            return Err(Error::Parse("trajectory has no samples".into()));
        }
        for (k, u) in right_limits {
            if k >= traj.len() {
                return Err(Error::Parse(format!("right limit for missing sample {k}")));
            }
            traj.inputs_after[k] = u;
        }
        if traj.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse("times are not strictly increasing".into()));
        }
        Ok(traj)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, problem: &OCProblem) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv(problem).as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad number `{s}`")))
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad index `{s}`")))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Constraint, ScalarField, SystemModel};

    fn problem() -> OCProblem {
        OCProblem::new(
            "t",
            SystemModel::linear_diagonal(vec![0.0, -1.0]),
            vec![0.5, 0.5],
            1.0,
            (0.0, 1.0),
            ScalarField::linear(vec![-1.0, 0.0]),
        )
        .unwrap()
        .with_constraint(Constraint::bilinear("s", vec![1.0, 1.0], vec![0.0, 0.0], -4.0))
    }

    fn sample() -> Trajectory {
        Trajectory {
            times: vec![0.0, 0.5, 1.0],
            states: vec![
                Vector::from_vec(vec![0.5, 0.5]),
                Vector::from_vec(vec![1.0, 1.0 / 3.0]),
                Vector::from_vec(vec![1.5, 0.1]),
            ],
            inputs: vec![1.0, 1.0, 0.25],
            inputs_after: vec![1.0, 0.75, 0.25],
            active: vec![Some(0), Some(2), None],
            events: vec![Event {
                time: 0.5,
                constraint: 2,
                kind: EventKind::Activate,
            }],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = problem();
        let t = sample();
        let text = t.to_csv(&p);
        assert!(text.starts_with("t,u,active,x1,x2,s1,s2,s3\n"));
        assert!(text.contains("# event,5.0000000000000000e-1,2,activate"));
        let back = Trajectory::from_csv(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_non_monotone_times() {
        let p = problem();
        let mut t = sample();
        t.times[2] = 0.5;
        assert!(Trajectory::from_csv(&t.to_csv(&p)).is_err());
    }

    #[test]
    fn objective_is_terminal_value_without_stage_cost() {
        assert_eq!(sample().objective(&problem()), -1.5);
    }

    #[test]
    fn sample_lookup() {
        let t = sample();
        assert_eq!(t.sample_at(0.49), 1);
        assert_eq!(t.sample_at(-1.0), 0);
        assert_eq!(t.sample_at(7.0), 2);
        assert_eq!(t.event_samples(), vec![1]);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
    }
}
