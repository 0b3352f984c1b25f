use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) {
        self.names.push(name.into());
        self.arrays.push(value);
    }

    /// Adds a tensor drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn push_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, Array::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn n_tensors(&self) -> usize {
        self.arrays.len()
    }

    /// Total scalar count.
    pub fn n_params(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.arrays[i])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flat_map(|a| a.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape {
                op: "assign_flat",
                lhs: vec![self.n_params()],
                rhs: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for a in &mut self.arrays {
            let n = a.len();
            a.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.arrays.iter().map(|a| tape.var(a.clone())).collect()
    }

    /// Moves every tensor onto `tape` as a differentiable leaf. The set is
    /// left holding empty placeholders until [`ParamSet::restore`].
    pub fn lend(&mut self, tape: &mut Tape) -> Vec<Var> {
        self.arrays
            .iter_mut()
            .map(|a| tape.var(std::mem::replace(a, Array::zeros(&[0]))))
            .collect()
    }

    /// Takes back tensors previously lent with [`ParamSet::lend`].
    pub fn restore(&mut self, arrays: Vec<Array>) {
        debug_assert_eq!(arrays.len(), self.arrays.len());
        self.arrays = arrays;
    }

    /// Flat gradient in the same order as [`ParamSet::flatten`].
    pub fn flat_grad(&self, tape: &Tape, grads: &Gradients, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for &v in vars {
            match grads.get(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
            }
        }
        out
    }

    /// Writes `# <descriptor>` followed by one `name,shape,values...` line
    /// per tensor. Shape dimensions are joined by `x`.
    pub fn save(&self, path: &Path, descriptor: &str) -> Result<()> {
        let mut text = format!("# {descriptor}\n");
        for (name, a) in self.names.iter().zip(&self.arrays) {
            let shape: Vec<String> = a.shape().iter().map(usize::to_string).collect();
            text.push_str(name);
            text.push(',');
            text.push_str(&shape.join("x"));
            for v in a.data() {
                text.push(',');
                text.push_str(&format!("{v:?}"));
            }
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(())
    }

    /// Inverse of [`ParamSet::save`]; returns the descriptor and the tensors.
    pub fn load(path: &Path) -> Result<(String, Self)> {
        let text = fs::read_to_string(path)?;
        let perr = |row: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut lines = text.lines();
        let descriptor = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| perr(1, "missing '# <descriptor>' header".into()))?
            .to_string();
        let mut set = ParamSet::new();
        for (i, line) in lines.enumerate() {
            let row = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let name = fields.next().unwrap_or_default();
            let shape: Vec<usize> = fields
                .next()
                .ok_or_else(|| perr(row, "missing shape".into()))?
                .split('x')
                .map(|d| d.parse().map_err(|e| perr(row, format!("bad shape dimension {d:?}: {e}"))))
                .collect::<Result<_>>()?;
            let data: Vec<f64> = fields
                .map(|v| v.parse().map_err(|e| perr(row, format!("bad value {v:?}: {e}"))))
                .collect::<Result<_>>()?;
            let array = Array::new(shape, data).map_err(|e| perr(row, e.to_string()))?;
            set.push(name, array);
        }
        Ok((descriptor, set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_init_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        p.push_uniform("w", &[16, 8], 16, &mut rng);
        assert!(p.flatten().iter().all(|v| v.abs() <= 0.25));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = ParamSet::new();
        q.push_uniform("w", &[16, 8], 16, &mut rng);
        assert_eq!(p, q);
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamSet::new();
        p.push_uniform("l0.w", &[3, 5], 3, &mut rng);
        p.push_uniform("l0.b", &[5], 3, &mut rng);
        p.push("tiny", Array::new(vec![2], vec![1e-300, -0.1 + 0.2]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.save(&path, "mlp in=3 hidden=5").unwrap();
        let (desc, q) = ParamSet::load(&path).unwrap();
        assert_eq!(desc, "mlp in=3 hidden=5");
        assert_eq!(p, q);
    }

    #[test]
    fn load_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "# x\nw,2,1.0,abc\n").unwrap();
        match ParamSet::load(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = ParamSet::new();
        p.push("a", Array::zeros(&[2, 2]));
        p.push("b", Array::zeros(&[3]));
        p.assign_flat(&[1., 2., 3., 4., 5., 6., 7.]).unwrap();
        assert_eq!(p.get("b").unwrap().data(), &[5., 6., 7.]);
        assert_eq!(p.flatten(), vec![1., 2., 3., 4., 5., 6., 7.]);
        assert!(p.assign_flat(&[1.0]).is_err());
    }
}
