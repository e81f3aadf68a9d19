use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sharding::ParamSpec;
use crate::tensor::{Block, MuonHyper};

/// Unsharded parameters and momenta on a single rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState<B> {
    pub params: BTreeMap<usize, B>,
    pub momenta: BTreeMap<usize, B>,
}

impl<B: Block> DenseState<B> {
    pub fn new(params: BTreeMap<usize, B>) -> Self {
        let momenta = params
            .iter()
            .map(|(&id, b)| {
                let (r, c) = b.shape();
                (id, B::zeros(r, c))
            })
            .collect();
        DenseState { params, momenta }
    }

    /// Momentum, orthogonalize, apply; parameter by parameter in id order.
    pub fn oracle_step(
        &mut self,
        specs: &[ParamSpec],
        grads: &BTreeMap<usize, B>,
        hyper: &MuonHyper,
    ) -> Result<()> {
        let mut specs: Vec<&ParamSpec> = specs.iter().collect();
        specs.sort_by_key(|p| p.id);
        for p in specs {
            let missing = || Error::LayoutMismatch(format!("oracle: no data for parameter `{}`", p.name));
            let g = grads.get(&p.id).ok_or_else(missing)?;
            let m = self.momenta.get(&p.id).ok_or_else(missing)?;
            let param = self.params.get(&p.id).ok_or_else(missing)?;
            let (m_next, g_eff) = B::momentum_update(m, g, hyper).map_err(|e| e.for_param(&p.name))?;
            let u = g_eff.orthogonalize(hyper).map_err(|e| e.for_param(&p.name))?;
            let next = B::apply_update(param, &u, hyper, p.rows, p.cols).map_err(|e| e.for_param(&p.name))?;
            self.momenta.insert(p.id, m_next);
            self.params.insert(p.id, next);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn zero_gradients_only_decay() {
        let specs = vec![ParamSpec::new(0, "a", 2, 3), ParamSpec::new(1, "b", 4, 1)];
        let hyper = MuonHyper {
            lr: 0.1,
            weight_decay: 0.5,
            ..MuonHyper::default()
        };
        let init: BTreeMap<usize, Matrix<f64>> = specs
            .iter()
            .map(|p| (p.id, Matrix::from_fn(p.rows, p.cols, |i, j| 1.0 + (i + j) as f64)))
            .collect();
        let grads = specs.iter().map(|p| (p.id, Matrix::zeros(p.rows, p.cols))).collect();
        let mut s = DenseState::new(init.clone());
        s.oracle_step(&specs, &grads, &hyper).unwrap();
        for (id, p) in &s.params {
            assert_eq!(*p, init[id].scale(0.95));
        }
    }

    #[test]
    fn scalar_chain() {
        let specs = vec![ParamSpec::new(0, "s", 1, 1)];
        let hyper = MuonHyper {
            lr: 0.1,
            weight_decay: 0.0,
            ns_iterations: 1,
            nesterov: false,
            ..MuonHyper::default()
        };
        let init = BTreeMap::from([(0, Matrix::from_vec(1, 1, vec![0.5f64]).unwrap())]);
        let grads = BTreeMap::from([(0, Matrix::from_vec(1, 1, vec![2.0]).unwrap())]);
        let mut s = DenseState::new(init);
        s.oracle_step(&specs, &grads, &hyper).unwrap();
        assert!((s.params[&0].get(0, 0) - (0.5 - 0.1 * 0.701)).abs() < 1e-7);

        let mut again = DenseState::new(BTreeMap::from([(0, Matrix::from_vec(1, 1, vec![0.5]).unwrap())]));
        again.oracle_step(&specs, &grads, &hyper).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn non_finite_names_parameter() {
        let specs = vec![ParamSpec::new(7, "attn.q", 2, 2)];
        let init = BTreeMap::from([(7, Matrix::<f64>::zeros(2, 2))]);
        let grads = BTreeMap::from([(7, Matrix::from_vec(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]).unwrap())]);
        let err = DenseState::new(init)
            .oracle_step(&specs, &grads, &MuonHyper::default())
            .unwrap_err();
        assert!(err.to_string().contains("attn.q"), "{err}");
    }
}
