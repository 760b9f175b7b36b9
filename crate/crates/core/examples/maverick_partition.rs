//! Split a dataset among clients with Maverick owners and inspect label skew.
//!
//! `cargo run --example maverick_partition`

use fedms::data::{emd, label_distribution, maverick_partition, normalized_counts, synth_blobs, EmdMetric, MaverickSpec};

fn main() -> fedms::Result<()> {
    let data = synth_blobs(5, 60, 4, 1.0, 0)?;
    // class 4 belongs to client 0 alone, class 3 is shared by clients 1 and 2
    let spec: MaverickSpec = [(4, [0].into()), (3, [1, 2].into())].into();
    let part = maverick_partition(&data, 6, &spec, 42)?;
    let global = normalized_counts(&data.class_counts());

    println!("client  size  maverick  distribution                      emd");
    for id in 0..part.num_clients() {
        let dist = label_distribution(&part, &data, id)?;
        let shown: Vec<String> = dist.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "{id:>6} {:>5}  {:>8}  [{}]  {:.3}",
            part.assignments[id].len(),
            if part.is_maverick(id) { "yes" } else { "no" },
            shown.join(", "),
            emd(&dist, &global, EmdMetric::Categorical)?
        );
    }
    Ok(())
}
