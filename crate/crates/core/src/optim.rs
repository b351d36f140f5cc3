//! Adam with one learning rate per parameter group.

use crate::model::{Model, ModelGrad, ParamGroup};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: [u64; 8],
    m: [Vec<f64>; 8],
    v: [Vec<f64>; 8],
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: [0; 8],
            m: ParamGroup::ALL.map(|g| vec![0.0; model.group_len(g)]),
            v: ParamGroup::ALL.map(|g| vec![0.0; model.group_len(g)]),
        }
    }

    /// Applies one update; groups with a zero learning rate are left untouched.
    pub fn step(&mut self, model: &mut Model, grad: &ModelGrad, lr: &[f64; 8]) {
        for g in ParamGroup::ALL {
            let k = g.index();
            if lr[k] == 0.0 {
                continue;
            }
            self.step[k] += 1;
            let t = self.step[k] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let gv = grad.get(g);
            for i in 0..gv.len() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv[i] * gv[i];
                let update = lr[k] * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *model.param_mut(g, i) -= update;
            }
        }
    }

    /// Re-indexes per-surfel moments after surfels were added or removed.
    /// `source[j]` names the old surfel whose state new surfel `j` inherits.
    pub fn remap_surfels(&mut self, model: &Model, source: &[Option<usize>]) {
        for g in ParamGroup::ALL.into_iter().filter(|g| g.is_per_surfel()) {
            let k = g.index();
            let stride = model.group_stride(g);
            for state in [&mut self.m[k], &mut self.v[k]] {
                let mut next = vec![0.0; stride * source.len()];
                for (j, src) in source.iter().enumerate() {
                    if let Some(o) = src {
                        next[j * stride..(j + 1) * stride].copy_from_slice(&state[o * stride..(o + 1) * stride]);
                    }
                }
                *state = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{DeformationField, FieldConfig};
    use crate::math::Vec3;
    use crate::scene::{init_scene, SceneConfig};

    fn model() -> Model {
        let points: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let config = SceneConfig {
            num_controls: 2,
            neighbors: 1,
            ..SceneConfig::default()
        };
        let (s, c) = init_scene(&points, &[Vec3::repeat(0.5); 4], &config).unwrap();
        let field = DeformationField::new(&FieldConfig {
            hidden_width: 4,
            hidden_layers: 1,
            pos_freqs: 1,
            time_freqs: 1,
            seed: 0,
        });
        Model::new(config, s, c, field).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model();
        let before = m.clone();
        let mut grad = ModelGrad::zeros(&m);
        grad.get_mut(ParamGroup::Centers)[0] = 3.0;
        grad.get_mut(ParamGroup::Opacities)[1] = -0.5;
        let mut adam = Adam::new(&m);
        let mut lr = [0.0; 8];
        lr[ParamGroup::Centers.index()] = 0.1;
        lr[ParamGroup::Opacities.index()] = 0.2;
        adam.step(&mut m, &grad, &lr);
        assert!((m.surfels[0].center.x - (before.surfels[0].center.x - 0.1)).abs() < 1e-12);
        assert!((m.surfels[1].opacity_logit - (before.surfels[1].opacity_logit + 0.2)).abs() < 1e-12);
        assert_eq!(m.surfels[2], before.surfels[2]);
    }

    #[test]
    fn zero_rates_leave_model_bitwise_unchanged() {
        let mut m = model();
        let before = m.clone();
        let mut grad = ModelGrad::zeros(&m);
        for g in grad.groups.iter_mut() {
            g.iter_mut().for_each(|v| *v = 1.0);
        }
        let mut adam = Adam::new(&m);
        for _ in 0..5 {
            adam.step(&mut m, &grad, &[0.0; 8]);
        }
        assert_eq!(m, before);
    }

    #[test]
    fn remap_keeps_inherited_state() {
        let mut m = model();
        let mut grad = ModelGrad::zeros(&m);
        grad.get_mut(ParamGroup::Centers).iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        let mut adam = Adam::new(&m);
        adam.step(&mut m, &grad, &[1e-3; 8]);
        let old = adam.m[0].clone();
        m.surfels = vec![m.surfels[3].clone(), m.surfels[3].clone()];
        adam.remap_surfels(&m, &[Some(3), None]);
        assert_eq!(adam.m[0][..3], old[9..12]);
        assert_eq!(adam.m[0][3..], [0.0; 3]);
    }
}
