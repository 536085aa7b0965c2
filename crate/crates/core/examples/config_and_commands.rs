//! Config resolution (defaults, then file, then flags) and driving the command layer
//! from code, the way the `ftsqa` binary does.

use std::fs;

use clap::Parser;
use ftsqa::cli::{run, Cli, Command};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let file = dir.path().join("run.conf");
    let dataset = dir.path().join("syn.jsonl");
    let text = format!(
        "# synthetic run\ndataset = {}\nout = {}\nhidden_dim = 8\nembedding-dim = 8\nepochs = 40\nsynth-answers = 5\n",
        dataset.display(),
        dir.path().join("run").display()
    );
    fs::write(&file, text)?;

    let argv = ["ftsqa", "train", "--config", file.to_str().unwrap_or_default(), "--epochs", "3", "--set", "batch-size=4"];
    let cli = Cli::try_parse_from(argv)?;
    let cfg = cli.config()?;
    for key in ["epochs", "hidden-dim", "batch-size", "lr", "variant"] {
        println!("{key:<12} = {}", cfg.get(key)?);
    }

    for command in [Command::Synth, Command::Split, Command::Train, Command::Gradcheck] {
        println!("\n$ ftsqa {command:?}\n{}", run(command, &cfg)?);
    }

    if let Err(e) = cfg.clone().set("epochs", "many") {
        println!("\nrejected: {e}");
    }
    for (key, value) in [("dropout", "1.5"), ("output-mode", "concat")] {
        let mut bad = cfg.clone();
        bad.set(key, value)?;
        if let Err(e) = bad.validate() {
            println!("rejected: {e}");
        }
    }
    Ok(())
}
