//! Small dense-vector helpers shared by the models, the index and their
//! gradients.

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cosine similarity; zero when either vector has (near) zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na <= NORM_EPS || nb <= NORM_EPS {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `x / |x|`, or `None` for a (near) zero vector.
pub fn normalized(x: &[f64]) -> Option<Vec<f64>> {
    let n = norm(x);
    (n > NORM_EPS).then(|| x.iter().map(|v| v / n).collect())
}

/// Gradient of `y = x / |x|` with respect to `x`, given `dL/dy`.
pub fn normalize_backward(x: &[f64], grad_y: &[f64]) -> Vec<f64> {
    let n = norm(x);
    if n <= NORM_EPS {
        return vec![0.0; x.len()];
    }
    let proj = dot(x, grad_y) / n;
    x.iter()
        .zip(grad_y)
        .map(|(xi, gi)| (gi - xi / n * proj) / n)
        .collect()
}

/// Gradient of `cos(a, b)` with respect to `a`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na <= NORM_EPS || nb <= NORM_EPS {
        return vec![0.0; a.len()];
    }
    let c = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(ai, bi)| bi / (na * nb) - c * ai / (na * na))
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Derives an independent 64-bit seed from a base seed and a stream key
/// (SplitMix64 finalizer).
pub fn mix_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stable hash of a string key (FNV-1a), for seeding per-document streams.
pub fn str_key(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += eps;
                m[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.2];
        let g = cosine_grad(&a, &b);
        let n = numeric_grad(|x| cosine(x, &b), &a);
        for (x, y) in g.iter().zip(&n) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn normalize_gradient_matches_differences() {
        let x = [0.3, -1.2, 0.7];
        let w = [0.5, 2.0, -1.0];
        let g = normalize_backward(&x, &w);
        let n = numeric_grad(|v| dot(&normalized(v).unwrap(), &w), &x);
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_vectors_are_guarded() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(normalized(&[0.0, 0.0]).is_none());
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sign(0.0), 0.0);
    }
}
