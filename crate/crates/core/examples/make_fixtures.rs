//! Regenerates the models under `fixtures/`.
//!
//! ```text
//! cargo run -p lipcert --example make_fixtures [OUT_DIR]
//! ```
//!
//! All weights are drawn from fixed seeds, so the output is reproducible.

use std::path::{Path, PathBuf};

use lipcert::linops::{Conv2dOperator, DenseOperator, TensorShape};
use lipcert::network::{save_model, write_vector, Layer, MaxPool2d, NetworkModel};
use lipcert::sampling::{rng, SampleRng};
use lipcert::Result;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(r: &mut SampleRng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            std * z
        })
        .collect()
}

fn dense(r: &mut SampleRng, out: usize, inp: usize, bias_std: f64, relu: bool) -> Result<Layer> {
    let w = normals(r, out * inp, (2.0 / inp as f64).sqrt());
    let b = normals(r, out, bias_std);
    Layer::dense(DenseOperator::new(out, inp, w)?, b, relu)
}

fn conv(
    r: &mut SampleRng,
    input: &TensorShape,
    out_channels: usize,
    k: usize,
    padding: usize,
    bias_std: f64,
) -> Result<Layer> {
    let (cin, _, _) = input.chw()?;
    let fan_in = cin * k * k;
    let w = normals(r, out_channels * fan_in, (2.0 / fan_in as f64).sqrt());
    let b = normals(r, out_channels, bias_std);
    let op = Conv2dOperator::new(input.clone(), out_channels, (k, k), (1, 1), (padding, padding), w)?;
    Layer::conv(op, &b)
}

fn pool2() -> Layer {
    Layer::MaxPool2d(MaxPool2d {
        window: (2, 2),
        stride: (2, 2),
    })
}

fn shape(dims: &[usize]) -> TensorShape {
    TensorShape::new(dims.to_vec()).expect("static shape")
}

fn write(dir: &Path, file: &str, model: NetworkModel) -> Result<()> {
    save_model(&model, dir.join(file))?;
    println!("wrote {}", dir.join(file).display());
    Ok(())
}

fn main() -> Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    std::fs::create_dir_all(&dir)?;

    write(
        &dir,
        "identity.json",
        NetworkModel::new(
            "identity",
            shape(&[2]),
            vec![Layer::dense(DenseOperator::identity(2), vec![100.0, 100.0], true)?],
        )?,
    )?;

    write(
        &dir,
        "diag21.json",
        NetworkModel::new(
            "diag21",
            shape(&[2]),
            vec![Layer::dense(DenseOperator::diag(&[2.0, 1.0]), vec![-1.0, 0.0], true)?],
        )?,
    )?;

    let mut r = rng(0x3A7E_0001);
    let layers = vec![
        dense(&mut r, 12, 8, 0.3, true)?,
        dense(&mut r, 10, 12, 0.3, true)?,
        dense(&mut r, 4, 10, 0.3, false)?,
    ];
    write(&dir, "random3.json", NetworkModel::new("random3", shape(&[8]), layers)?)?;

    let mut r = rng(0x3A7E_0002);
    let input = shape(&[1, 28, 28]);
    let c1 = conv(&mut r, &input, 6, 5, 0, 0.05)?;
    let s1 = c1.out_shape(&input)?;
    let p1 = pool2();
    let s2 = p1.out_shape(&s1)?;
    let c2 = conv(&mut r, &s2, 16, 5, 0, 0.05)?;
    let s3 = c2.out_shape(&s2)?;
    let p2 = pool2();
    let flat = p2.out_shape(&s3)?.numel();
    let layers = vec![
        c1,
        p1,
        c2,
        p2,
        dense(&mut r, 120, flat, 0.05, true)?,
        dense(&mut r, 84, 120, 0.05, true)?,
        dense(&mut r, 10, 84, 0.05, false)?,
    ];
    write(&dir, "mnist-net.json", NetworkModel::new("mnist-net", input, layers)?)?;

    // A single convolution with a nominal input, so the re-centred bias
    // varies by position and takes both signs.
    let mut r = rng(0x3A7E_0003);
    let input = shape(&[1, 8, 8]);
    let layer = conv(&mut r, &input, 4, 3, 1, 0.1)?;
    write(&dir, "conv-relu.json", NetworkModel::new("conv-relu", input.clone(), vec![layer])?)?;
    let x0: Vec<f64> = (0..input.numel()).map(|_| r.random_range(0.0..1.0)).collect();
    write_vector(&dir.join("conv-relu.x0.bin"), &x0)?;
    println!("wrote {}", dir.join("conv-relu.x0.bin").display());
    Ok(())
}
