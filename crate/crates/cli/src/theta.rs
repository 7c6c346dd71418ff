//! Parameter files: a short `key value` header, a blank line, then one
//! parameter per line with 17 significant digits.
//!
//! ```text
//! gmkit-theta 1
//! kind jump_masked
//! step 600
//! n_params 6
//!
//! 1.2345678901234567e0
//! ...
//! ```

use std::path::Path;

use crate::config::ExperimentKind;
use crate::CliError;

const MAGIC: &str = "gmkit-theta 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFile {
    pub kind: ExperimentKind,
    /// Optimizer steps taken to reach `theta`.
    pub step: usize,
    pub theta: Vec<f64>,
}

impl ThetaFile {
    pub fn render(&self) -> String {
        let mut s = format!("{MAGIC}\nkind {}\nstep {}\nn_params {}\n\n", self.kind.as_str(), self.step, self.theta.len());
        for v in &self.theta {
            s.push_str(&format!("{v:.16e}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let corrupt = |m: &str| CliError::ModelFileCorrupt(m.to_string());
        let (head, body) = text.split_once("\n\n").ok_or_else(|| corrupt("missing blank line after header"))?;
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("not a gmkit parameter file"));
        }
        let mut field = |key: &str| -> Result<String, CliError> {
            let line = lines.next().ok_or_else(|| corrupt(&format!("missing `{key}`")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(corrupt(&format!("expected `{key}`, found `{line}`"))),
            }
        };
        let kind = match field("kind")?.as_str() {
            "flow_x1" => ExperimentKind::FlowX1,
            "jump_masked" => ExperimentKind::JumpMasked,
            other => return Err(corrupt(&format!("unknown kind `{other}`"))),
        };
        let step = field("step")?.parse().map_err(|_| corrupt("bad step"))?;
        let n: usize = field("n_params")?.parse().map_err(|_| corrupt("bad n_params"))?;
        let theta: Vec<f64> = body
            .lines()
            .map(|l| l.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| corrupt("non-numeric parameter"))?;
        if theta.len() != n {
            return Err(corrupt(&format!("header says {n} parameters, found {}", theta.len())));
        }
        Ok(ThetaFile { kind, step, theta })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ModelFileCorrupt(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks that the file fits a model with `n_params` parameters of `kind`.
    pub fn expect(&self, kind: ExperimentKind, n_params: usize) -> Result<(), CliError> {
        if self.kind != kind || self.theta.len() != n_params {
            return Err(CliError::ModelFileCorrupt(format!(
                "file holds {} parameters for {}, config needs {n_params} for {}",
                self.theta.len(),
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip_is_exact() {
        let f = ThetaFile { kind: ExperimentKind::FlowX1, step: 12, theta: vec![0.1, -1.0 / 3.0, 1e-300, 7.0] };
        assert_eq!(ThetaFile::parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let good = ThetaFile { kind: ExperimentKind::JumpMasked, step: 0, theta: vec![1.0, 2.0] }.render();
        for bad in [
            "hello".to_string(),
            good.replace("n_params 2", "n_params 3"),
            good.replace("2.0000000000000000e0", "two"),
            good.replace("kind jump_masked", "kind tree"),
            good.replace("gmkit-theta 1", "gmkit-theta 2"),
        ] {
            assert!(matches!(ThetaFile::parse(&bad), Err(CliError::ModelFileCorrupt(_))), "{bad}");
        }
    }
}
