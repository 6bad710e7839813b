//! Named parameter collections.
//!
//! [`ParamSet`] holds plain values and is what optimizers and checkpoints
//! work with. [`ParamVars`] is the same collection placed on a [`Tape`], and
//! is what forward passes and differentiable updates work with.

use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Ordered, uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(AutodiffError::DuplicateName(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Appends every entry of `other`, failing on a name collision.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (name, value) in other.entries {
            self.insert(name, value)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names, same order, same shapes.
    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(AutodiffError::Incongruent(format!(
                "{} entries vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(AutodiffError::Incongruent(format!("`{na}` vs `{nb}`")));
            }
            if ta.shape() != tb.shape() {
                return Err(AutodiffError::Incongruent(format!(
                    "`{na}` has shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.check_congruent(other).is_ok()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// All scalars concatenated in entry order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// A congruent copy whose scalars are taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_scalars() {
            return Err(AutodiffError::Shape(format!(
                "flat vector of length {} for {} scalars",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for (_, t) in out.iter_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Serializes to the line-oriented text format read by [`ParamSet::from_text`].
    ///
    /// ```text
    /// paramset 2
    /// param policy.l0.weight 2 2 128
    /// 1.0000000000000000e-1 ...
    /// ```
    ///
    /// Values are written with 17 significant digits, so parsing them back
    /// reproduces every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "paramset {}", self.len()).unwrap();
        for (name, t) in self.iter() {
            write!(out, "param {} {}", name, t.rank()).unwrap();
            for d in t.shape() {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ParamSet> {
        let parse_err = |line: usize, detail: String| AutodiffError::Parse { line, detail };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty input".into()))?;
        let count: usize = header
            .strip_prefix("paramset ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| parse_err(ln, format!("expected `paramset <count>`, got `{header}`")))?;

        let mut set = ParamSet::new();
        for _ in 0..count {
            let (ln, decl) = lines
                .next()
                .ok_or_else(|| parse_err(ln, "unexpected end of input".into()))?;
            let mut fields = decl.split_whitespace();
            if fields.next() != Some("param") {
                return Err(parse_err(ln, format!("expected `param`, got `{decl}`")));
            }
            let name = fields
                .next()
                .ok_or_else(|| parse_err(ln, "missing name".into()))?;
            let rank: usize = fields
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| parse_err(ln, "missing rank".into()))?;
            let shape: Vec<usize> = fields
                .map(|d| d.parse().map_err(|_| parse_err(ln, format!("bad dimension `{d}`"))))
                .collect::<Result<_>>()?;
            if shape.len() != rank {
                return Err(parse_err(ln, format!("rank {rank} but {} dims", shape.len())));
            }
            let (vln, values) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("missing values for `{name}`")))?;
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| parse_err(vln, format!("bad value `{v}`"))))
                .collect::<Result<_>>()?;
            let tensor = Tensor::new(shape, data).map_err(|e| parse_err(vln, e.to_string()))?;
            set.insert(name, tensor)?;
        }
        Ok(set)
    }
}

/// A [`ParamSet`] whose entries are nodes on a tape.
#[derive(Clone, Debug)]
pub struct ParamVars<'t> {
    names: Vec<String>,
    vars: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    /// Places `params` on `tape` as tracked leaves.
    pub fn track(tape: &'t Tape, params: &ParamSet) -> Self {
        ParamVars {
            names: params.names().map(str::to_string).collect(),
            vars: params.iter().map(|(_, t)| tape.param(t.clone())).collect(),
        }
    }

    /// Places `params` on `tape` as constants.
    pub fn constant(tape: &'t Tape, params: &ParamSet) -> Self {
        ParamVars {
            names: params.names().map(str::to_string).collect(),
            vars: params.iter().map(|(_, t)| tape.constant(t.clone())).collect(),
        }
    }

    pub fn from_parts(names: Vec<String>, vars: Vec<Var<'t>>) -> Self {
        assert_eq!(names.len(), vars.len());
        ParamVars { names, vars }
    }

    pub fn get(&self, name: &str) -> Option<Var<'t>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
    }

    pub fn require(&self, name: &str) -> Result<Var<'t>> {
        self.get(name)
            .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> + '_ {
        self.names.iter().map(String::as_str).zip(self.vars.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values as a plain [`ParamSet`].
    pub fn values(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, var) in self.iter() {
            set.insert(name, var.value().as_ref().clone())
                .expect("names are unique");
        }
        set
    }

    /// Constant copies; gradients stop here.
    pub fn detach(&self) -> ParamVars<'t> {
        ParamVars {
            names: self.names.clone(),
            vars: self.vars.iter().map(Var::detach).collect(),
        }
    }

    pub fn check_congruent(&self, other: &ParamVars<'t>) -> Result<()> {
        if self.names != other.names {
            return Err(AutodiffError::Incongruent(format!(
                "names {:?} vs {:?}",
                self.names, other.names
            )));
        }
        for ((name, a), b) in self.iter().zip(other.vars.iter()) {
            if a.shape() != b.shape() {
                return Err(AutodiffError::Incongruent(format!(
                    "`{name}` has shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<'t> Tape {
    /// Gradient of `loss` with respect to every entry of `params`, as values.
    pub fn gradients(&'t self, loss: Var<'t>, params: &ParamVars<'t>) -> Result<ParamSet> {
        let grads = self.grad(loss, params.vars())?;
        let mut set = ParamSet::new();
        for (name, g) in params.names().iter().zip(grads) {
            set.insert(name.clone(), g)?;
        }
        Ok(set)
    }

    /// Gradient of `loss` with respect to every entry of `params`, kept on
    /// the tape for further differentiation.
    pub fn gradients_graph(
        &'t self,
        loss: Var<'t>,
        params: &ParamVars<'t>,
    ) -> Result<ParamVars<'t>> {
        let grads = self.grad_graph(loss, params.vars())?;
        Ok(ParamVars::from_parts(params.names().to_vec(), grads))
    }
}

/// `params - step * grads`, recorded on the tape.
///
/// The result stays connected to `params`, `grads` and `step`, so a loss
/// evaluated at the updated parameters can be differentiated with respect to
/// the original ones.
pub fn functional_update<'t>(
    params: &ParamVars<'t>,
    grads: &ParamVars<'t>,
    step: Var<'t>,
) -> Result<ParamVars<'t>> {
    params.check_congruent(grads)?;
    let vars = params
        .vars()
        .iter()
        .zip(grads.vars())
        .map(|(&p, &g)| p - g.scale_by(step))
        .collect();
    Ok(ParamVars::from_parts(params.names().to_vec(), vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        p.insert("b", Tensor::matrix(1, 2, vec![0.1, -3.5e-300]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        assert!(matches!(
            p.insert("a", Tensor::scalar(0.0)),
            Err(AutodiffError::DuplicateName(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = sample();
        let q = ParamSet::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn update_with_zero_step_is_identity() {
        let tape = Tape::new();
        let p = sample();
        let vars = ParamVars::track(&tape, &p);
        let grads = ParamVars::constant(&tape, &p);
        let out = functional_update(&vars, &grads, tape.scalar(0.0)).unwrap();
        assert_eq!(out.values(), p);
    }

    #[test]
    fn update_arithmetic() {
        let tape = Tape::new();
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = ParamSet::new();
        g.insert("w", Tensor::vector(vec![1.0, 1.0])).unwrap();
        let out = functional_update(
            &ParamVars::track(&tape, &p),
            &ParamVars::constant(&tape, &g),
            tape.scalar(0.5),
        )
        .unwrap();
        assert_eq!(out.values().get("w").unwrap().data(), &[0.5, 1.5]);
    }

    #[test]
    fn incongruent_update_fails() {
        let tape = Tape::new();
        let p = sample();
        let mut q = ParamSet::new();
        q.insert("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = functional_update(
            &ParamVars::track(&tape, &p),
            &ParamVars::constant(&tape, &q),
            tape.scalar(1.0),
        );
        assert!(matches!(r, Err(AutodiffError::Incongruent(_))));
    }
}
