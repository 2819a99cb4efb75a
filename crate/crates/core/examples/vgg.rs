//! Builds the VGG configurations, reports their size, and runs a width-reduced
//! VGG-11 forward pass with and without noise.
//!
//!     cargo run --release --example vgg

use rram_noise::bitnoise::NoiseSpec;
use rram_noise::nn::vgg::{self, VggConfig};
use rram_noise::nn::Network;
use rram_noise::rng::RngStream;
use rram_noise::tensor::{ElementType, Tensor};

fn main() -> rram_noise::Result<()> {
    for cfg in vgg::ALL {
        let layers = vgg::layers(cfg, [3, 32, 32], 10);
        let net = vgg::random_network(
            cfg.architecture_name(),
            layers,
            [3, 32, 32],
            10,
            ElementType::Float32,
            0,
        )?;
        println!(
            "{:<6} {} weight layers, {:>9} parameters, {:>7} activation elements per image",
            cfg.architecture_name(),
            net.weight_layer_count(),
            net.params().values().map(Tensor::len).sum::<usize>(),
            net.activation_elements_per_sample()
        );
    }

    let layers = vgg::layers_scaled(VggConfig::A, [3, 32, 32], 10, 8);
    let net: Network = vgg::random_network(
        "vgg11-narrow",
        layers,
        [3, 32, 32],
        10,
        ElementType::Float16,
        1,
    )?;
    let x = Tensor::from_f64s(
        vec![2, 3, 32, 32],
        ElementType::Float32,
        &vec![0.5; 2 * 3 * 32 * 32],
    )?;
    let rng = RngStream::new(3);
    let clean = net.forward(&x, None, &rng)?;
    let noisy = net.forward(&x, Some(&NoiseSpec::symmetric(1e-3)), &rng)?;
    println!("clean logits {:?}", &clean.to_f64_vec()[..4]);
    println!("noisy logits {:?}", &noisy.to_f64_vec()[..4]);
    Ok(())
}
