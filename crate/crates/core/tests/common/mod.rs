//! Loop-based reference implementations of the margin losses.

pub fn dotp(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Value and gradients w.r.t. outputs, correct and each wrong answer.
pub struct Naive {
    pub value: f64,
    pub g_out: Vec<Vec<f64>>,
    pub g_correct: Vec<Vec<f64>>,
    pub g_wrong: Vec<Vec<Vec<f64>>>,
}

pub fn naive_full_time(o: &[Vec<f64>], c: &[f64], w: &[Vec<f64>], m: f64) -> Naive {
    let d = c.len();
    let mut r = Naive {
        value: 0.0,
        g_out: vec![vec![0.0; d]; o.len()],
        g_correct: vec![vec![0.0; d]],
        g_wrong: vec![vec![vec![0.0; d]]; w.len()],
    };
    for t in 0..o.len() {
        for k in 0..w.len() {
            let h = m - dotp(&o[t], c) + dotp(&o[t], &w[k]);
            if h > 0.0 {
                r.value += h;
                for i in 0..d {
                    r.g_out[t][i] += w[k][i] - c[i];
                    r.g_correct[0][i] -= o[t][i];
                    r.g_wrong[k][0][i] += o[t][i];
                }
            }
        }
    }
    r
}

pub fn naive_pooling(o: &[Vec<f64>], c: &[f64], w: &[Vec<f64>], m: f64) -> Naive {
    let d = c.len();
    let n = o.len() as f64;
    let mut p = vec![0.0; d];
    for ot in o {
        for i in 0..d {
            p[i] += ot[i] / n;
        }
    }
    let pooled = naive_full_time(&[p], c, w, m);
    Naive {
        value: pooled.value,
        g_out: vec![pooled.g_out[0].iter().map(|g| g / n).collect(); o.len()],
        g_correct: pooled.g_correct,
        g_wrong: pooled.g_wrong,
    }
}

pub fn naive_shared(o: &[Vec<f64>], c: &[Vec<f64>], w: &[Vec<Vec<f64>>], m: f64) -> Naive {
    let d = o[0].len();
    let steps = o.len();
    let mut r = Naive {
        value: 0.0,
        g_out: vec![vec![0.0; d]; steps],
        g_correct: vec![vec![0.0; d]; steps],
        g_wrong: vec![vec![vec![0.0; d]; steps]; w.len()],
    };
    for t in 0..steps {
        for k in 0..w.len() {
            let h = m - dotp(&o[t], &c[t]) + dotp(&o[t], &w[k][t]);
            if h > 0.0 {
                r.value += h;
                for i in 0..d {
                    r.g_out[t][i] += w[k][t][i] - c[t][i];
                    r.g_correct[t][i] -= o[t][i];
                    r.g_wrong[k][t][i] += o[t][i];
                }
            }
        }
    }
    r
}
