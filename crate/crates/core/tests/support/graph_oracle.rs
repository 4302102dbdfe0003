//! Gradient check for the autodiff graph: a random network touching every
//! differentiable op is evaluated by the graph (f32, reverse mode) and by a
//! straight-line f64 reimplementation differentiated with central finite
//! differences.

use lmd_core::numerics::{Graph, ParamId, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Trial {
    cin: usize,
    c1: usize,
    c2: usize,
    batch: usize,
    h: usize,
    w: usize,
    d: usize,
    x: Vec<f64>,
    emb: Vec<f64>,
    target: Vec<f64>,
    /// w1, b1, a, ab, w2, b2, w3, b3.
    params: Vec<(Vec<usize>, Vec<f64>)>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

impl Trial {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let cin = rng.random_range(1..=2);
        let c1 = rng.random_range(1..=3);
        let c2 = rng.random_range(1..=3);
        let batch = rng.random_range(1..=2);
        let h = 2 * rng.random_range(1..=3);
        let w = 2 * rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let shapes = [
            vec![c1, cin, 3, 3],
            vec![c1],
            vec![c1, d],
            vec![c1],
            vec![c2, c1, 3, 3],
            vec![c2],
            vec![1, c1 + c2, 3, 3],
            vec![1],
        ];
        let params = shapes
            .into_iter()
            .map(|s| {
                let n = s.iter().product();
                (s, uniform(rng, n, 0.8))
            })
            .collect();
        let n = cin * batch * h * w;
        Self {
            cin,
            c1,
            c2,
            batch,
            h,
            w,
            d,
            x: uniform(rng, n, 1.0),
            emb: uniform(rng, batch * d, 1.0),
            target: uniform(rng, batch * h * w, 1.0),
            params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).sum()
    }

    /// Reverse-mode gradients from the f32 graph, flattened in parameter order.
    pub fn autodiff(&self) -> Vec<f64> {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, (s, v))| store.insert(&format!("p{i}"), Tensor::new(s.clone(), f32s(v)).unwrap()))
            .collect();
        let mut g = Graph::new();
        let p: Vec<_> = ids.iter().map(|&id| g.param(&store, id)).collect();
        let x = g.input(Tensor::new(vec![self.cin, self.batch, self.h, self.w], f32s(&self.x)).unwrap());
        let e = g.input(Tensor::new(vec![self.batch, self.d], f32s(&self.emb)).unwrap());
        let y = g.input(Tensor::new(vec![1, self.batch, self.h, self.w], f32s(&self.target)).unwrap());

        let h1 = g.conv2d(x, p[0], p[1]).unwrap();
        let t = g.affine(e, p[2], p[3]).unwrap();
        let h1 = g.channel_bias(h1, t).unwrap();
        let h1 = g.silu(h1);
        let q = g.avg_pool2(h1).unwrap();
        let q = g.conv2d(q, p[4], p[5]).unwrap();
        let q = g.silu(q);
        let u = g.upsample2(q).unwrap();
        let j = g.concat_channels(u, h1).unwrap();
        let o = g.conv2d(j, p[6], p[7]).unwrap();
        let diff = g.sub(o, y).unwrap();
        let sq = g.sum_of_squares(diff);
        let half = g.scale(sq, 0.5);
        let prod = g.mul(o, y).unwrap();
        let m = g.mean(prod);
        let loss = g.add(half, m).unwrap();

        let grads = g.backward(loss, &store).unwrap();
        ids.iter()
            .flat_map(|&id| {
                grads
                    .get(id)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|&v| v as f64)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// The same network in f64 from explicit loops.
    pub fn loss(&self, flat: &[f64]) -> f64 {
        let mut it = flat.iter().copied();
        let p: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|(_, v)| it.by_ref().take(v.len()).collect())
            .collect();
        let (b, h, w) = (self.batch, self.h, self.w);

        let mut h1 = conv(&self.x, self.cin, b, h, w, &p[0], &p[1], self.c1);
        for bi in 0..b {
            for c in 0..self.c1 {
                let mut t = p[3][c];
                for k in 0..self.d {
                    t += self.emb[bi * self.d + k] * p[2][c * self.d + k];
                }
                for v in &mut h1[(c * b + bi) * h * w..][..h * w] {
                    *v += t;
                }
            }
        }
        h1.iter_mut().for_each(|v| *v = silu(*v));
        let (hh, hw) = (h / 2, w / 2);
        let mut pooled = vec![0.0; self.c1 * b * hh * hw];
        for pl in 0..self.c1 * b {
            for y in 0..hh {
                for x in 0..hw {
                    let at = |yy: usize, xx: usize| h1[pl * h * w + yy * w + xx];
                    pooled[pl * hh * hw + y * hw + x] = 0.25
                        * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
                }
            }
        }
        let mut q = conv(&pooled, self.c1, b, hh, hw, &p[4], &p[5], self.c2);
        q.iter_mut().for_each(|v| *v = silu(*v));
        let mut joined = Vec::with_capacity((self.c1 + self.c2) * b * h * w);
        for pl in 0..self.c2 * b {
            for y in 0..h {
                for x in 0..w {
                    joined.push(q[pl * hh * hw + (y / 2) * hw + x / 2]);
                }
            }
        }
        joined.extend_from_slice(&h1);
        let o = conv(&joined, self.c1 + self.c2, b, h, w, &p[6], &p[7], 1);
        let mut sq = 0.0;
        let mut prod = 0.0;
        for (ov, tv) in o.iter().zip(&self.target) {
            sq += (ov - tv) * (ov - tv);
            prod += ov * tv;
        }
        0.5 * sq + prod / o.len() as f64
    }

    pub fn finite_differences(&self) -> Vec<f64> {
        let base: Vec<f64> = self.params.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let step = 1e-6;
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += step;
                minus[i] -= step;
                (self.loss(&plus) - self.loss(&minus)) / (2.0 * step)
            })
            .collect()
    }

    /// `‖g_autodiff − g_fd‖ / ‖g_fd‖`.
    pub fn relative_error(&self) -> f64 {
        let ad = self.autodiff();
        let fd = self.finite_differences();
        let num: f64 = ad.iter().zip(&fd).map(|(a, f)| (a - f) * (a - f)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[allow(clippy::too_many_arguments)]
fn conv(x: &[f64], cin: usize, b: usize, h: usize, w: usize, wt: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * b * h * w];
    for co in 0..cout {
        for bi in 0..b {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let iv = x[(ci * b + bi) * h * w + sy as usize * w + sx as usize];
                                acc += iv * wt[(co * cin + ci) * 9 + (ky * 3 + kx) as usize];
                            }
                        }
                    }
                    out[(co * b + bi) * h * w + y as usize * w + xx as usize] = acc;
                }
            }
        }
    }
    out
}
