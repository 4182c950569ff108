//! Closed-form matrix exponentials for the small constant blocks that appear
//! when controls are held piecewise constant.

/// Generalized (sine, cosine) pair for `y'' = m y`.
///
/// Returns `(f, g)` with `g(s) = cosh(sqrt(m) s)`, `f(s) = sinh(sqrt(m) s)/sqrt(m)`
/// for `m > 0`, the trigonometric analogues for `m < 0`, and `(s, 1)` at `m = 0`.
/// A short series is used when `m s^2` is tiny so the pair stays smooth across
/// the branch switch.
pub(crate) fn sc_pair(m: f64, s: f64) -> (f64, f64) {
    let z = m * s * s;
    if z.abs() < 1e-6 {
        let f = s * (1.0 + z / 6.0 * (1.0 + z / 20.0 * (1.0 + z / 42.0)));
        let g = 1.0 + z / 2.0 * (1.0 + z / 12.0 * (1.0 + z / 30.0));
        (f, g)
    } else if m > 0.0 {
        let w = m.sqrt();
        ((w * s).sinh() / w, (w * s).cosh())
    } else {
        let w = (-m).sqrt();
        ((w * s).sin() / w, (w * s).cos())
    }
}

/// Apply `exp(M h)` to `v` for a 2x2 matrix `M`.
///
/// Splits `M = (tr/2) I + N` with `N` trace-free; `N^2 = m I` with
/// `m = ((m00-m11)/2)^2 + m01 m10`, so `exp(N h) = g I + f N`.
pub(crate) fn expm2_apply(m: &[[f64; 2]; 2], h: f64, v: [f64; 2]) -> [f64; 2] {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let d = 0.5 * (m[0][0] - m[1][1]);
    let disc = d * d + m[0][1] * m[1][0];
    let (f, g) = sc_pair(disc, h);
    let scale = (half_tr * h).exp();
    [
        scale * ((g + f * d) * v[0] + f * m[0][1] * v[1]),
        scale * (f * m[1][0] * v[0] + (g - f * d) * v[1]),
    ]
}

/// `exp(M h)` for a 3x3 matrix by scaling-and-squaring with a Taylor series.
pub(crate) fn expm3(m: &[[f64; 3]; 3], h: f64) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = m[i][j] * h;
        }
    }
    let norm = a
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    for row in a.iter_mut() {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }

    // exp(a) by Taylor; ||a|| <= 0.5 so 14 terms reach machine precision
    let mut result = identity3();
    let mut term = identity3();
    for n in 1..=14 {
        term = mul3(&term, &a);
        let inv = 1.0 / n as f64;
        for i in 0..3 {
            for j in 0..3 {
                term[i][j] *= inv;
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul3(&result, &result);
    }
    result
}

pub(crate) fn apply3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

fn identity3() -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..3 {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sc_pair_matches_closed_forms() {
        let (f, g) = sc_pair(4.0, 0.3); // sinh(2*0.3)/2, cosh(0.6)
        assert!((f - 0.6_f64.sinh() / 2.0).abs() < 1e-15);
        assert!((g - 0.6_f64.cosh()).abs() < 1e-15);
        let (f, g) = sc_pair(-9.0, 0.5); // sin(1.5)/3, cos(1.5)
        assert!((f - 1.5_f64.sin() / 3.0).abs() < 1e-15);
        assert!((g - 1.5_f64.cos()).abs() < 1e-15);
        // series branch continuous against exact branch
        let (f1, g1) = sc_pair(1e-7, 1.0);
        let (f2, g2) = sc_pair(1e-5, 1.0);
        assert!((f1 - 1.0).abs() < 1e-7 && (f2 - 1.0).abs() < 1e-5);
        assert!((g1 - 1.0).abs() < 1e-7 && (g2 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn expm2_pure_rotation() {
        // M = [[0,-w],[w,0]] rotates by w h
        let w = 1.3;
        let m = [[0.0, -w], [w, 0.0]];
        let v = expm2_apply(&m, 0.7, [1.0, 0.0]);
        assert!((v[0] - (w * 0.7).cos()).abs() < 1e-14);
        assert!((v[1] - (w * 0.7).sin()).abs() < 1e-14);
    }

    #[test]
    fn expm3_matches_expm2_on_embedded_block() {
        let k = 0.8;
        let a = 1.1;
        let m2 = [[-k, -a], [a, 0.0]];
        let m3 = [[-k, -a, 0.0], [a, 0.0, 0.0], [0.0, 0.0, -0.3]];
        let h = 0.9;
        let v2 = expm2_apply(&m2, h, [0.6, 0.4]);
        let e3 = expm3(&m3, h);
        let v3 = apply3(&e3, [0.6, 0.4, 1.0]);
        assert!((v2[0] - v3[0]).abs() < 1e-13);
        assert!((v2[1] - v3[1]).abs() < 1e-13);
        assert!((v3[2] - (-0.3f64 * h).exp()).abs() < 1e-13);
    }
}
