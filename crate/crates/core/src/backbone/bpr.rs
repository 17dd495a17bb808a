use super::graph::{axpy, SparseRowGraph};
use super::model::{propagate, propagate_adjoint, BackboneKind, EmbeddingModel, Params};
use crate::error::{Error, Result};
use crate::util::dot;

/// One BPR sample: `user` prefers `pos` over `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// `-ln sigmoid(diff)` computed without overflow.
pub fn bpr_triplet_loss(diff: f64) -> f64 {
    if diff >= 0.0 {
        (-diff).exp().ln_1p()
    } else {
        -diff + diff.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}



/// Batch objective: mean of `-ln sigmoid(y_ui - y_uj)` plus
/// `l2 / (2B) * sum` of squared norms of the touched base embeddings (and
/// VBPR preference rows).
pub fn bpr_loss(model: &EmbeddingModel, graph: Option<&SparseRowGraph>, batch: &[Triplet], l2: f64) -> Result<f64> {
    Ok(bpr_loss_and_grad(model, graph, batch, l2, false)?.0)
}

/// Loss plus analytic gradients for every parameter table.
pub fn bpr_loss_and_grad(
    model: &EmbeddingModel,
    graph: Option<&SparseRowGraph>,
    batch: &[Triplet],
    l2: f64,
    want_grad: bool,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty BPR batch"));
    }
    let kind = model.kind();
    let (m, d, layers) = (model.num_users(), model.dim(), model.layers());
    let params = &model.params;
    let e0 = model.base_nodes();
    let nodes = if kind.propagates() {
        let graph = graph.ok_or(Error::Unpropagated)?;
        propagate(graph, &e0, d, layers).mean
    } else {
        e0.clone()
    };
    let projected = model.projected_items(params);
    let batch_scale = 1.0 / batch.len() as f64;

    // Item-side score vectors: propagated embeddings plus, for the kNN
    // backbone, the projected smoothed features.
    let mut items = nodes[m * d..].to_vec();
    if kind == BackboneKind::ModalityKnn {
        for h in &projected {
            axpy(1.0, h, &mut items);
        }
    }

    let mut grads = params.zeros_like();
    let mut grad_nodes = vec![0.0; nodes.len()];
    let mut grad_proj_items: Vec<Vec<f64>> = projected.iter().map(|h| vec![0.0; h.len()]).collect();
    let mut loss = 0.0;
    let mut reg = 0.0;

    for t in batch {
        let (u, i, j) = (t.user as usize, t.pos as usize, t.neg as usize);
        let a_u = &nodes[u * d..(u + 1) * d];
        let (b_i, b_j) = (&items[i * d..(i + 1) * d], &items[j * d..(j + 1) * d]);
        let mut diff = dot(a_u, b_i) - dot(a_u, b_j);
        if kind == BackboneKind::Vbpr {
            for (pref, h) in params.pref.iter().zip(&projected) {
                let theta = &pref[u * d..(u + 1) * d];
                diff += dot(theta, &h[i * d..(i + 1) * d]) - dot(theta, &h[j * d..(j + 1) * d]);
            }
        }
        loss += bpr_triplet_loss(diff);
        for node in [u, m + i, m + j] {
            reg += dot(&e0[node * d..(node + 1) * d], &e0[node * d..(node + 1) * d]);
        }
        for pref in &params.pref {
            let theta = &pref[u * d..(u + 1) * d];
            reg += dot(theta, theta);
        }
        if !want_grad {
            continue;
        }

        // d loss / d diff
        let g = -sigmoid(-diff) * batch_scale;
        {
            let (gu, rest) = grad_nodes.split_at_mut(m * d);
            axpy(g, b_i, &mut gu[u * d..(u + 1) * d]);
            axpy(-g, b_j, &mut gu[u * d..(u + 1) * d]);
            axpy(g, a_u, &mut rest[i * d..(i + 1) * d]);
            axpy(-g, a_u, &mut rest[j * d..(j + 1) * d]);
        }
        match kind {
            BackboneKind::Lightgcn => {}
            BackboneKind::ModalityKnn => {
                for gh in grad_proj_items.iter_mut() {
                    axpy(g, a_u, &mut gh[i * d..(i + 1) * d]);
                    axpy(-g, a_u, &mut gh[j * d..(j + 1) * d]);
                }
            }
            BackboneKind::Vbpr => {
                for ((pref, h), (gpref, gh)) in params
                    .pref
                    .iter()
                    .zip(&projected)
                    .zip(grads.pref.iter_mut().zip(grad_proj_items.iter_mut()))
                {
                    let theta = &pref[u * d..(u + 1) * d];
                    axpy(g, &h[i * d..(i + 1) * d], &mut gpref[u * d..(u + 1) * d]);
                    axpy(-g, &h[j * d..(j + 1) * d], &mut gpref[u * d..(u + 1) * d]);
                    axpy(g, theta, &mut gh[i * d..(i + 1) * d]);
                    axpy(-g, theta, &mut gh[j * d..(j + 1) * d]);
                }
            }
        }
        // L2 on touched base rows (and preference rows).
        let r = l2 * batch_scale;
        for node in [u, m + i, m + j] {
            let src = &e0[node * d..(node + 1) * d];
            let dst = if node < m {
                &mut grads.user[node * d..(node + 1) * d]
            } else {
                &mut grads.item[(node - m) * d..(node - m + 1) * d]
            };
            axpy(r, src, dst);
        }
        for (pref, gpref) in params.pref.iter().zip(grads.pref.iter_mut()) {
            axpy(r, &pref[u * d..(u + 1) * d], &mut gpref[u * d..(u + 1) * d]);
        }
    }
    loss = loss * batch_scale + 0.5 * l2 * batch_scale * reg;
    if !want_grad {
        return Ok((loss, grads));
    }

    // Projections: h_m = values_m W_m^T, so dW_m = dH_m^T values_m.
    for ((gw, gh), input) in grads.proj.iter_mut().zip(&grad_proj_items).zip(model.modal_inputs()) {
        for item in 0..model.num_items() {
            let grow = &gh[item * d..(item + 1) * d];
            if grow.iter().all(|&v| v == 0.0) {
                continue;
            }
            let f = &input.values[item * input.dim..(item + 1) * input.dim];
            for (r, &gr) in grow.iter().enumerate() {
                if gr != 0.0 {
                    axpy(gr, f, &mut gw[r * input.dim..(r + 1) * input.dim]);
                }
            }
        }
    }

    let grad_e0 = if kind.propagates() {
        propagate_adjoint(graph.expect("checked above"), &grad_nodes, d, layers)
    } else {
        grad_nodes
    };
    let (gu, gi) = grad_e0.split_at(m * d);
    axpy(1.0, gu, &mut grads.user);
    axpy(1.0, gi, &mut grads.item);
    Ok((loss, grads))
}
