//! Straight-line integer reference for the whole attention pipeline.
//!
//! Written against plain `i64` slices with no tiling, no state machine and no
//! shared code with the simulator beyond file loading, so it can serve as an
//! oracle for golden outputs.

pub struct Requant {
    pub mult: i64,
    pub shift: u32,
}

pub fn requant(acc: i64, p: &Requant) -> i8 {
    let prod = acc * p.mult;
    let half = 1i64 << (p.shift - 1);
    let mag = (prod.abs() + half) >> p.shift;
    let v = if prod < 0 { -mag } else { mag };
    v.clamp(-128, 127) as i8
}

/// `a (rows x inner) * b (inner x cols) + bias`, asserting the 24-bit range.
pub fn matmul(a: &[i64], rows: usize, inner: usize, b: &[i64], cols: usize, bias: Option<&[i64]>) -> Vec<i64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut s = bias.map_or(0, |b| b[c]);
            for k in 0..inner {
                s += a[r * inner + k] * b[k * cols + c];
            }
            assert!((-(1 << 23)..(1 << 23)).contains(&s), "accumulator {s} outside 24 bits");
            out.push(s);
        }
    }
    out
}

fn wide(v: &[i8]) -> Vec<i64> {
    v.iter().map(|&x| i64::from(x)).collect()
}

/// Shift softmax over one row, consuming it in chunks of `part`.
pub fn softmax_row(row: &[i8], part: usize) -> Vec<u8> {
    let exp = |max: i64, x: i64| 128i64 >> ((max - x) >> 5);
    let mut max = i64::MIN;
    let mut sum = 0i64;
    for chunk in row.chunks(part) {
        let cmax = chunk.iter().map(|&x| i64::from(x)).max().unwrap();
        let new_max = max.max(cmax);
        if max != i64::MIN {
            sum >>= (new_max - max) >> 5;
        }
        max = new_max;
        sum += chunk.iter().map(|&x| exp(max, i64::from(x))).sum::<i64>();
        sum = sum.min(32767);
    }
    let inv = 32640 / sum;
    row.iter().map(|&x| (inv >> ((max - i64::from(x)) >> 5)) as u8).collect()
}

pub struct Head<'a> {
    pub wq: &'a [i8],
    pub wk: &'a [i8],
    pub wv: &'a [i8],
    pub bq: &'a [i8],
    pub bk: &'a [i8],
    pub bv: &'a [i8],
}

pub struct Layer<'a> {
    pub s: usize,
    pub e: usize,
    pub p: usize,
    pub x: &'a [i8],
    pub heads: Vec<Head<'a>>,
    pub wo: &'a [i8],
    pub bo: &'a [i8],
    /// q, k, v, qk, av, out.
    pub rq: [Requant; 6],
    pub part: usize,
}

pub struct LayerOutput {
    pub output: Vec<i8>,
    pub probs: Vec<Vec<u8>>,
}

pub fn attention(l: &Layer) -> LayerOutput {
    let (s, e, p, h) = (l.s, l.e, l.p, l.heads.len());
    let x = wide(l.x);
    let rq_all = |acc: Vec<i64>, r: &Requant| acc.into_iter().map(|a| i64::from(requant(a, r))).collect::<Vec<_>>();
    let mut concat = vec![0i64; s * h * p];
    let mut probs_all = Vec::new();
    for (hi, hd) in l.heads.iter().enumerate() {
        let q = rq_all(matmul(&x, s, e, &wide(hd.wq), p, Some(&wide(hd.bq))), &l.rq[0]);
        let k = rq_all(matmul(&x, s, e, &wide(hd.wk), p, Some(&wide(hd.bk))), &l.rq[1]);
        let v = rq_all(matmul(&x, s, e, &wide(hd.wv), p, Some(&wide(hd.bv))), &l.rq[2]);
        let mut kt = vec![0i64; p * s];
        for r in 0..s {
            for c in 0..p {
                kt[c * s + r] = k[r * p + c];
            }
        }
        let scores: Vec<i8> = matmul(&q, s, p, &kt, s, None).into_iter().map(|a| requant(a, &l.rq[3])).collect();
        let probs: Vec<u8> = scores.chunks(s).flat_map(|row| softmax_row(row, l.part)).collect();
        let pw: Vec<i64> = probs.iter().map(|&v| i64::from(v)).collect();
        let o = rq_all(matmul(&pw, s, s, &v, p, None), &l.rq[4]);
        for r in 0..s {
            concat[r * h * p + hi * p..r * h * p + (hi + 1) * p].copy_from_slice(&o[r * p..(r + 1) * p]);
        }
        probs_all.push(probs);
    }
    let output = matmul(&concat, s, h * p, &wide(l.wo), e, Some(&wide(l.bo)))
        .into_iter()
        .map(|a| requant(a, &l.rq[5]))
        .collect();
    LayerOutput { output, probs: probs_all }
}
