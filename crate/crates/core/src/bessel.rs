//! Integer-order Bessel functions of the first kind.

/// `J_0(x) ..= J_nmax(x)` for real `x` by Miller's backward recurrence,
/// normalized with `J_0 + 2 sum J_2k = 1`.
pub fn bessel_j_upto(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = nmax.max(ax as usize);
    // Start well above both the order and the argument.
    let mut m = top + 20 + (40.0 * top as f64).sqrt() as usize;
    m += m % 2;
    let mut jp1 = 0.0f64;
    let mut j = 1e-300f64;
    let mut norm = 0.0f64;
    for k in (1..=m).rev() {
        let jm1 = 2.0 * k as f64 / ax * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            out.iter_mut().for_each(|v| *v *= 1e-250);
        }
        let order = k - 1;
        if order <= nmax {
            out[order] = j;
        }
        if order > 0 && order % 2 == 0 {
            norm += 2.0 * j;
        }
    }
    norm += j;
    let mut res: Vec<f64> = out.iter().map(|v| v / norm).collect();
    if x < 0.0 {
        for (n, v) in res.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    res
}

/// `J_n(x)` for any integer order, using `J_{-n} = (-1)^n J_n`.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let m = n.unsigned_abs() as usize;
    let v = bessel_j_upto(m, x)[m];
    if n < 0 && m % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Table of `J_n(x)` for `n` in `-nmax ..= nmax`, indexed by `n + nmax`.
pub fn bessel_j_symmetric(nmax: usize, x: f64) -> Vec<f64> {
    let pos = bessel_j_upto(nmax, x);
    let mut out = Vec::with_capacity(2 * nmax + 1);
    for n in (1..=nmax).rev() {
        out.push(if n % 2 == 1 { -pos[n] } else { pos[n] });
    }
    out.extend_from_slice(&pos);
    out
}
