use std::fs;
use std::io::Write;

use megt::data::{generate_synthetic, standard_split, write_bag, write_manifest, ManifestEntry, SynthSpec, SynthTask};

use crate::config::seed_from_env;
use crate::{CliError, CliResult, SynthArgs};

pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.bags == 0 {
        return Err(CliError::usage("no bags requested (--bags 0)"));
    }
    let task: SynthTask = args.task.parse()?;
    let seed = match args.seed {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    };
    let mut spec = SynthSpec::new(task, args.bags, seed);
    if let Some(v) = args.n_low_min {
        spec.n_low_min = v;
    }
    if let Some(v) = args.n_low_max {
        spec.n_low_max = v;
    }
    if let Some(v) = args.children_per_low {
        spec.children_per_low = v;
    }
    if let Some(v) = args.d {
        spec.d = v;
    }
    if let Some(v) = args.signal_strength {
        spec.signal_strength = v;
    }
    if let Some(v) = args.noise {
        spec.noise = v;
    }
    if let Some(v) = args.witness_fraction {
        spec.witness_fraction = v;
    }
    spec.validate()?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", args.out.display())))?;
    let bags = generate_synthetic(&spec)?;
    let splits = standard_split(bags.len());
    let mut entries = Vec::with_capacity(bags.len());
    for (bag, split) in bags.iter().zip(splits) {
        let name = format!("{}.megb", bag.id);
        write_bag(bag, args.out.join(&name))
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", args.out.join(&name).display())))?;
        entries.push(ManifestEntry {
            path: name.into(),
            label: bag.label,
            split,
            line: 0,
        });
    }
    let header = format!(
        "megt synth task={task} bags={} seed={seed} n_low=[{}, {}] children_per_low={} d={} signal_strength={} noise={}",
        spec.bags, spec.n_low_min, spec.n_low_max, spec.children_per_low, spec.d, spec.signal_strength, spec.noise
    );
    let manifest = args.out.join(MANIFEST_NAME);
    write_manifest(&manifest, &header, &entries)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", manifest.display())))?;
    writeln!(out, "{}", manifest.display())?;
    Ok(())
}
