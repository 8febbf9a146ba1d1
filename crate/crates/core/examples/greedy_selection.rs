//! Greedy (ad, location) selection: the dueling network scores every
//! location of a candidate in one pass, the one-hot-location variant needs
//! one pass per location.
//!
//! cargo run --release --example greedy_selection

use dear::features::{random_item, random_observation, ItemKind, ModelDims};
use dear::qnet::{QNetwork, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dear::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = ModelDims::full();
    let obs = random_observation(&mut rng, dims.list_len, 20, 6);
    let ads: Vec<Vec<f64>> = (0..8).map(|_| random_item(ItemKind::Ad, &mut rng).vector()).collect();
    for variant in [Variant::Dear, Variant::ArchBOneHotLoc] {
        let net = QNetwork::new(variant, dims, false, &mut rng);
        let t = std::time::Instant::now();
        let sel = net.greedy_action(&obs, &ads)?;
        let where_ = match sel.action.candidate {
            Some(c) if sel.action.location > 0 => format!("ad {c} at location {}", sel.action.location),
            _ => "no ad".to_string(),
        };
        println!(
            "{:<18} {where_}, Q = {:.4}, {} forward passes for {} candidates ({:?})",
            variant.name(),
            sel.q,
            sel.evaluations,
            ads.len(),
            t.elapsed()
        );
    }

    let net = QNetwork::new(Variant::Dear, dims, false, &mut rng);
    let state = net.encode(&obs)?;
    let v = net.state_value(state.vector())?.expect("dueling");
    println!("V(s) = {v:.4}");
    for (i, ad) in ads.iter().take(3).enumerate() {
        let q = net.q_values(state.vector(), ad)?;
        let q: Vec<String> = q.iter().map(|x| format!("{x:+.3}")).collect();
        println!("Q(s, ad {i}) over locations 0..=7: [{}]", q.join(", "));
    }
    Ok(())
}
