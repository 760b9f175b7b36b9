//! Run a config file the way the command-line tool does and list what it wrote.
//!
//! `cargo run --release --example run_to_directory -- [config] [out_dir]`

use std::path::PathBuf;

use fedms::runner::cmd_run;

fn main() -> fedms::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/desk_maverick.toml"), PathBuf::from);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("fedms-run"), PathBuf::from);
    let manifest = cmd_run(&config, &out, None)?;
    println!("seed {} -> {}", manifest.master_seed, out.display());
    for entry in std::fs::read_dir(&out).expect("output dir") {
        let entry = entry.expect("dir entry");
        println!("  {} ({} bytes)", entry.file_name().to_string_lossy(), entry.metadata().expect("metadata").len());
    }
    Ok(())
}
