//! Hand forward pass on the autodiff tape.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;

use super::{chain, kinematic_joints, row3, skin, HandTemplate, NUM_POSED_JOINTS, POSE_DIM, SHAPE_DIM};
use crate::autodiff::{CustomOp, Graph, Mat, Var};

#[derive(Clone, Copy, Debug)]
pub struct HandVars {
    /// `N_v×3`.
    pub vertices: Var,
    /// `21×3`.
    pub joints: Var,
}

struct SkinOp {
    template: Arc<HandTemplate>,
    shaped: Array2<f64>,
    joints: Vec<Vector3<f64>>,
    local: Vec<Matrix3<f64>>,
    local_jac: Vec<[Matrix3<f64>; 3]>,
    rot: Vec<Matrix3<f64>>,
}

impl CustomOp for SkinOp {
    fn backward(&self, _inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Mat> {
        let t = &*self.template;
        let n = self.shaped.nrows();
        let parent = &t.parent;

        // Gradients of the global transforms and the direct path to the
        // shaped vertices.
        let mut g_rot = vec![Matrix3::zeros(); NUM_POSED_JOINTS];
        let mut g_trans = vec![Vector3::zeros(); NUM_POSED_JOINTS];
        let mut g_shaped = Array2::zeros((n, 3));
        for i in 0..n {
            let g = row3(grad, i);
            let v = row3(&self.shaped, i);
            let mut blended = Matrix3::zeros();
            for j in 0..NUM_POSED_JOINTS {
                let w = t.skin_weights[[i, j]];
                if w != 0.0 {
                    g_rot[j] += g * v.transpose() * w;
                    g_trans[j] += g * w;
                    blended += self.rot[j] * w;
                }
            }
            let gv = blended.transpose() * g;
            for c in 0..3 {
                g_shaped[[i, c]] = gv[c];
            }
        }

        // Reverse through the kinematic chain; children follow parents.
        let mut g_local = vec![Matrix3::zeros(); NUM_POSED_JOINTS];
        let mut g_joint = vec![Vector3::zeros(); NUM_POSED_JOINTS];
        for j in (0..NUM_POSED_JOINTS).rev() {
            let jj = self.joints[j];
            let pivot = jj - self.local[j] * jj;
            let g_pivot = if parent[j] < 0 {
                g_local[j] += g_rot[j];
                g_trans[j]
            } else {
                let p = parent[j] as usize;
                let rp = self.rot[p];
                let (gr, gt) = (g_rot[j], g_trans[j]);
                g_rot[p] += gr * self.local[j].transpose() + gt * pivot.transpose();
                g_trans[p] += gt;
                g_local[j] += rp.transpose() * gr;
                rp.transpose() * gt
            };
            g_joint[j] += g_pivot - self.local[j].transpose() * g_pivot;
            g_local[j] -= g_pivot * jj.transpose();
        }

        let mut g_theta = Mat::zeros((1, POSE_DIM));
        for j in 0..NUM_POSED_JOINTS {
            for m in 0..3 {
                g_theta[[0, 3 * j + m]] = g_local[j].component_mul(&self.local_jac[j][m]).sum();
            }
        }

        // Kinematic joints are regressed from the shaped mesh.
        for (j, gj) in g_joint.iter().enumerate() {
            for i in 0..n {
                let w = t.joint_regressor[[j, i]];
                if w != 0.0 {
                    for c in 0..3 {
                        g_shaped[[i, c]] += w * gj[c];
                    }
                }
            }
        }

        let mut g_beta = Mat::zeros((1, SHAPE_DIM));
        for i in 0..n {
            for c in 0..3 {
                let g = g_shaped[[i, c]];
                for k in 0..SHAPE_DIM {
                    g_beta[[0, k]] += t.shape_dirs[[i, c, k]] * g;
                }
            }
        }
        vec![g_theta, g_beta]
    }
}

/// Differentiable forward pass. `theta` is `1×48`, `beta` is `1×10`.
pub fn forward_graph(g: &mut Graph, template: &Arc<HandTemplate>, theta: Var, beta: Var) -> HandVars {
    assert_eq!(g.shape(theta), (1, POSE_DIM), "theta must be 1x{POSE_DIM}");
    assert_eq!(g.shape(beta), (1, SHAPE_DIM), "beta must be 1x{SHAPE_DIM}");
    let th: Vec<f64> = g.value(theta).iter().copied().collect();
    let be: Vec<f64> = g.value(beta).iter().copied().collect();

    let shaped = template.shaped_vertices(&be);
    let joints = kinematic_joints(template, &shaped);
    let (local, local_jac): (Vec<_>, Vec<_>) = (0..NUM_POSED_JOINTS)
        .map(|j| super::rodrigues_with_jacobian(&Vector3::new(th[3 * j], th[3 * j + 1], th[3 * j + 2])))
        .unzip();
    let ch = chain(&template.parent, &local, &joints);
    let vertices = skin(template, &shaped, &ch);

    let op = SkinOp {
        template: Arc::clone(template),
        shaped,
        joints,
        local,
        local_jac,
        rot: ch.rot,
    };
    let verts = g.custom(&[theta, beta], vertices, Box::new(op));
    let reg = g.constant(template.joint_regressor.clone());
    let joints = g.matmul(reg, verts);
    HandVars { vertices: verts, joints }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{central_difference, relative_error};
    use crate::handkin::{build_template, forward, HandParams, Side};

    fn params(theta: &Mat, beta: &Mat) -> HandParams {
        HandParams {
            theta: theta.iter().copied().collect(),
            beta: beta.iter().copied().collect(),
            side: Side::Right,
        }
    }

    #[test]
    fn matches_plain_forward_and_finite_differences() {
        let t = Arc::new(build_template(3, 60).unwrap());
        let theta = Mat::from_shape_fn((1, POSE_DIM), |(_, i)| ((i * 37 % 11) as f64 - 5.0) * 0.07);
        let beta = Mat::from_shape_fn((1, SHAPE_DIM), |(_, i)| ((i * 7 % 5) as f64 - 2.0) * 0.4);
        let weights = Mat::from_shape_fn((60, 3), |(i, c)| ((i * 3 + c) % 7) as f64 - 3.0);
        let jw = Mat::from_shape_fn((21, 3), |(i, c)| ((i + 2 * c) % 5) as f64 - 2.0);

        let loss_of = |th: &Mat, be: &Mat| {
            let out = forward(&t, &params(th, be)).unwrap();
            (&out.vertices * &weights).sum() + (&out.joints * &jw).sum()
        };

        let mut g = Graph::new();
        let th = g.input(theta.clone());
        let be = g.input(beta.clone());
        let hv = forward_graph(&mut g, &t, th, be);
        let plain = forward(&t, &params(&theta, &beta)).unwrap();
        assert_eq!(g.value(hv.vertices), &plain.vertices);

        let wv = g.constant(weights.clone());
        let wj = g.constant(jw.clone());
        let a = g.mul(hv.vertices, wv);
        let b = g.mul(hv.joints, wj);
        let (sa, sb) = (g.sum(a), g.sum(b));
        let loss = g.add(sa, sb);
        let grads = g.backward(loss);

        let fd_theta = central_difference(&theta, 1e-6, |x| loss_of(x, &beta));
        let fd_beta = central_difference(&beta, 1e-6, |x| loss_of(&theta, x));
        for (a, b) in grads.get(th).unwrap().iter().zip(fd_theta.iter()) {
            assert!(relative_error(*a, *b, 1e-6) < 1e-6, "theta {a} vs {b}");
        }
        for (a, b) in grads.get(be).unwrap().iter().zip(fd_beta.iter()) {
            // Central differences on an O(10) loss carry ~1e-9 of roundoff.
            assert!(relative_error(*a, *b, 1e-3) < 1e-6, "beta {a} vs {b}");
        }
    }
}
