use super::{LifConfig, Real};
use crate::error::{Error, Result};

/// Input and output sizes of a layer. Activations are stored pixel-major,
/// channel-minor; dense layers have a single pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl LayerGeom {
    pub fn in_pixels(&self) -> usize {
        self.in_h * self.in_w
    }
    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
    pub fn in_len(&self) -> usize {
        self.in_pixels() * self.in_ch
    }
    pub fn out_len(&self) -> usize {
        self.out_pixels() * self.out_ch
    }
}

/// Which output pixel each input pixel reaches through which kernel tap,
/// grouped by input pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    taps: usize,
    offsets: Vec<usize>,
    links: Vec<(u32, u32)>,
}

impl SpatialMap {
    fn from_triples(in_pixels: usize, taps: usize, mut triples: Vec<(usize, usize, usize)>) -> Self {
        triples.sort_unstable();
        let mut offsets = vec![0usize; in_pixels + 1];
        for &(ip, _, _) in &triples {
            offsets[ip + 1] += 1;
        }
        for p in 0..in_pixels {
            offsets[p + 1] += offsets[p];
        }
        let links = triples.iter().map(|&(_, op, k)| (op as u32, k as u32)).collect();
        Self { taps, offsets, links }
    }

    /// Fully connected layer viewed as a single pixel.
    pub fn dense() -> Self {
        Self::from_triples(1, 1, vec![(0, 0, 0)])
    }

    /// Strided, zero-padded 2-D convolution with a square kernel.
    pub fn conv(in_h: usize, in_w: usize, kernel: usize, stride: usize, padding: usize) -> Result<(Self, usize, usize)> {
        let out_h = conv_out(in_h, kernel, stride, padding)?;
        let out_w = conv_out(in_w, kernel, stride, padding)?;
        let mut triples = Vec::new();
        for oy in 0..out_h {
            for ox in 0..out_w {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < in_h && (ix as usize) < in_w {
                            triples.push((iy as usize * in_w + ix as usize, oy * out_w + ox, ky * kernel + kx));
                        }
                    }
                }
            }
        }
        Ok((Self::from_triples(in_h * in_w, kernel * kernel, triples), out_h, out_w))
    }

    /// Transposed convolution producing an `out_h`×`out_w` map.
    pub fn deconv(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        out_h: usize,
        out_w: usize,
    ) -> Self {
        let mut triples = Vec::new();
        for iy in 0..in_h {
            for ix in 0..in_w {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let oy = (iy * stride + ky) as isize - padding as isize;
                        let ox = (ix * stride + kx) as isize - padding as isize;
                        if oy >= 0 && ox >= 0 && (oy as usize) < out_h && (ox as usize) < out_w {
                            triples.push((iy * in_w + ix, oy as usize * out_w + ox as usize, ky * kernel + kx));
                        }
                    }
                }
            }
        }
        Self::from_triples(in_h * in_w, kernel * kernel, triples)
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    #[inline]
    fn links(&self, ip: usize) -> &[(u32, u32)] {
        &self.links[self.offsets[ip]..self.offsets[ip + 1]]
    }
}

pub(crate) fn conv_out(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || n + 2 * padding < kernel {
        return Err(Error::Config(format!("kernel {kernel} stride {stride} does not fit input {n}")));
    }
    Ok((n + 2 * padding - kernel) / stride + 1)
}

/// One synaptic layer followed by a LIF population. Weights are laid out
/// `[tap][in_ch][out_ch]`, biases `[out_ch]`.
#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub geom: LayerGeom,
    pub map: SpatialMap,
    pub lif: LifConfig,
}

impl Layer {
    pub fn weight_shape(&self) -> Vec<usize> {
        if self.map.taps == 1 && self.geom.in_pixels() == 1 {
            vec![self.geom.in_ch, self.geom.out_ch]
        } else {
            vec![self.map.taps, self.geom.in_ch, self.geom.out_ch]
        }
    }

    pub fn weight_len(&self) -> usize {
        self.map.taps * self.geom.in_ch * self.geom.out_ch
    }

    /// Number of weights feeding one output neuron through one input pixel.
    pub fn fan_in(&self) -> usize {
        self.map.taps * self.geom.in_ch
    }

    /// Synaptic input `out = b + W·x`, skipping zero inputs.
    pub(crate) fn forward<F: Real>(&self, w: &[F], b: &[F], x: &[F], out: &mut [F]) {
        let (cin, cout) = (self.geom.in_ch, self.geom.out_ch);
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
        for ip in 0..self.geom.in_pixels() {
            let links = self.map.links(ip);
            for (ci, &xv) in x[ip * cin..(ip + 1) * cin].iter().enumerate() {
                if xv == F::zero() {
                    continue;
                }
                for &(op, k) in links {
                    let wrow = &w[(k as usize * cin + ci) * cout..][..cout];
                    let orow = &mut out[op as usize * cout..][..cout];
                    if xv == F::one() {
                        orow.iter_mut().zip(wrow).for_each(|(o, &wv)| *o += wv);
                    } else {
                        orow.iter_mut().zip(wrow).for_each(|(o, &wv)| *o += xv * wv);
                    }
                }
            }
        }
    }

    /// Accumulates weight and bias gradients for output gradient `g`, and the
    /// input gradient when `g_in` is given.
    pub(crate) fn backward<F: Real>(
        &self,
        w: &[F],
        x: &[F],
        g: &[F],
        gw: &mut [F],
        gb: &mut [F],
        g_in: Option<&mut [F]>,
    ) {
        let (cin, cout) = (self.geom.in_ch, self.geom.out_ch);
        for row in g.chunks_exact(cout) {
            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        for ip in 0..self.geom.in_pixels() {
            let links = self.map.links(ip);
            for (ci, &xv) in x[ip * cin..(ip + 1) * cin].iter().enumerate() {
                if xv == F::zero() {
                    continue;
                }
                for &(op, k) in links {
                    let grow = &g[op as usize * cout..][..cout];
                    let gwrow = &mut gw[(k as usize * cin + ci) * cout..][..cout];
                    gwrow.iter_mut().zip(grow).for_each(|(a, &gv)| *a += xv * gv);
                }
            }
        }
        if let Some(g_in) = g_in {
            for ip in 0..self.geom.in_pixels() {
                let links = self.map.links(ip);
                for ci in 0..cin {
                    let mut acc = F::zero();
                    for &(op, k) in links {
                        let grow = &g[op as usize * cout..][..cout];
                        let wrow = &w[(k as usize * cin + ci) * cout..][..cout];
                        acc += wrow.iter().zip(grow).fold(F::zero(), |s, (&a, &b)| s + a * b);
                    }
                    g_in[ip * cin + ci] = acc;
                }
            }
        }
    }
}
