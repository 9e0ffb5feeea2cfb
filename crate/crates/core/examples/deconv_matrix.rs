//! A 3x3 kernel as a structured matrix: convolution of a 3x3 input is a
//! 1x9 row pattern, and deconvolution of a 1x1 input is its transpose.

use adsm_stereo::network::{as_matrix, ConvKind, ConvLayer, Tensor};

fn print_matrix(name: &str, m: &adsm_stereo::network::DenseMatrix) {
    println!("{name} ({}x{}):", m.rows, m.cols);
    for r in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|c| format!("{:5.1}", m.get(r, c))).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() -> adsm_stereo::Result<()> {
    let kernel = [1.0, 2.0, 0.0, -1.0, 3.0, 1.0, 0.5, 0.0, 2.0];
    let conv = ConvLayer::single_channel(ConvKind::Conv, &kernel[..4], 1, 0)?;
    let deconv = ConvLayer::single_channel(ConvKind::Deconv, &kernel[..4], 1, 0)?;

    // 2x2 kernel over a 3x3 input gives 2x2 outputs: a 4x9 matrix
    let c = as_matrix(&conv, 3, 3)?;
    print_matrix("conv", &c);
    // 2x2 kernel scattered from a 2x2 input gives 3x3 outputs: 9x4
    let h = as_matrix(&deconv, 2, 2)?;
    print_matrix("deconv", &h);
    println!("deconv matrix == conv matrix transposed: {}", h == c.transpose());

    let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]])?;
    let direct = conv.forward(&x)?;
    let via_matrix = c.mul_vec(x.data())?;
    println!("conv forward {:?} vs matrix {:?}", direct.data(), via_matrix);

    let big = ConvLayer::single_channel(ConvKind::Deconv, &kernel, 1, 0)?;
    let y = big.forward(&Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]])?)?;
    println!("deconv of a unit impulse places the kernel in the corner:");
    for r in 0..y.height() {
        let row: Vec<String> = (0..y.width()).map(|c| format!("{:5.1}", y.get(0, r, c))).collect();
        println!("  [{}]", row.join(" "));
    }
    Ok(())
}
