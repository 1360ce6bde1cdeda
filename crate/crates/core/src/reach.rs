//! Interval reachability through a ReLU network.

use crate::network::{ControlDomain, Layer, Mlp, NetworkError};

pub use crate::boxes::RealBox;

/// Per-layer interval bounds from one propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    /// `[ẑ̲⁽ⁱ⁾, ẑ̄⁽ⁱ⁾]` for `i = 1..ℓ`.
    pub pre: Vec<RealBox>,
    /// Clamped hidden bounds `[a⁽ⁱ⁾, b⁽ⁱ⁾]` for `i = 1..ℓ−1`.
    pub post: Vec<RealBox>,
}

impl LayerBounds {
    pub fn output(&self) -> &RealBox {
        self.pre.last().expect("at least one layer")
    }
}

/// Tight interval image of `[a, b]` under `z ↦ W z + B`.
pub fn lin_layer(a: &[f64], b: &[f64], layer: &Layer) -> Result<(Vec<f64>, Vec<f64>), NetworkError> {
    if a.len() != layer.cols() || b.len() != layer.cols() {
        return Err(NetworkError::DimMismatch {
            what: "interval input",
            layer: None,
            expected: layer.cols(),
            got: a.len().min(b.len()),
        });
    }
    let mut lo = Vec::with_capacity(layer.rows());
    let mut hi = Vec::with_capacity(layer.rows());
    for j in 0..layer.rows() {
        let mut l = layer.bias()[j];
        let mut h = layer.bias()[j];
        for (q, &w) in layer.row(j).iter().enumerate() {
            if w >= 0.0 {
                l += w * a[q];
                h += w * b[q];
            } else {
                l += w * b[q];
                h += w * a[q];
            }
        }
        lo.push(l);
        hi.push(h);
    }
    Ok((lo, hi))
}

/// Propagates the box `xk × uk` through the network; the last entry of
/// `pre` is the over-approximated successor box.
pub fn reach_boxes(m: &Mlp, xk: &RealBox, uk: &RealBox) -> Result<(LayerBounds, RealBox), NetworkError> {
    if xk.dim() != m.n_x() {
        return Err(NetworkError::DimMismatch { what: "state box", layer: None, expected: m.n_x(), got: xk.dim() });
    }
    if uk.dim() != m.n_u() {
        return Err(NetworkError::DimMismatch { what: "control box", layer: None, expected: m.n_u(), got: uk.dim() });
    }
    let mut a: Vec<f64> = xk.lo.iter().chain(&uk.lo).copied().collect();
    let mut b: Vec<f64> = xk.hi.iter().chain(&uk.hi).copied().collect();
    let mut bounds = LayerBounds { pre: Vec::new(), post: Vec::new() };
    let last = m.layers().len() - 1;
    for (i, layer) in m.layers().iter().enumerate() {
        let (lo, hi) = lin_layer(&a, &b, layer)?;
        if i < last {
            a = lo.iter().map(|v| v.max(0.0)).collect();
            b = hi.iter().map(|v| v.max(0.0)).collect();
            bounds.post.push(RealBox { lo: a.clone(), hi: b.clone() });
        }
        bounds.pre.push(RealBox { lo, hi });
    }
    let out = bounds.output().clone();
    Ok((bounds, out))
}

/// `F̄` applied `n` times with the full control domain.
pub fn f_bar_n(m: &Mlp, x0: &RealBox, u: &ControlDomain, n: usize) -> Result<RealBox, NetworkError> {
    assert!(n >= 1, "f_bar_n needs n >= 1");
    let ub = u.as_box();
    let mut x = x0.clone();
    for _ in 0..n {
        x = reach_boxes(m, &x, &ub)?.1;
    }
    Ok(x)
}

/// Layer bounds over the whole state and control domain.
pub fn global_bounds(m: &Mlp, x: &RealBox, u: &ControlDomain) -> Result<LayerBounds, NetworkError> {
    Ok(reach_boxes(m, x, &u.as_box())?.0)
}

/// Bounds for each of `N` prediction steps from the point `x0`.
pub fn horizon_bounds(m: &Mlp, x0: &[f64], u: &ControlDomain, n: usize) -> Result<Vec<LayerBounds>, NetworkError> {
    let ub = u.as_box();
    let mut x = RealBox::point(x0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (b, next) = reach_boxes(m, &x, &ub)?;
        out.push(b);
        x = next;
    }
    Ok(out)
}
