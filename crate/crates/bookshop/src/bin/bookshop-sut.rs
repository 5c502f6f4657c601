use std::collections::BTreeSet;
use std::time::Duration;

use clap::Parser;
use rexer_bookshop::{serve, BookshopConfig, BugId, IdMode};

/// Serve the reference bookshop over HTTP.
#[derive(Debug, Parser)]
#[command(name = "bookshop-sut", version)]
struct Args {
    /// Port to listen on (127.0.0.1). 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,

    /// Enable a seeded bug; repeatable.
    #[arg(long = "bug", value_name = "BUG_ID")]
    bugs: Vec<BugId>,

    /// Assign random identifiers instead of a1, b1, ...
    #[arg(long)]
    random_ids: bool,

    /// Seed for random identifiers.
    #[arg(long, default_value_t = 0)]
    id_seed: u64,

    /// Width of the unsynchronized inventory update window, milliseconds.
    #[arg(long, default_value_t = 5)]
    race_window_ms: u64,
}

fn main() {
    let args = Args::parse();
    let config = BookshopConfig {
        id_mode: if args.random_ids {
            IdMode::Random { seed: args.id_seed }
        } else {
            IdMode::Sequential
        },
        bugs: args.bugs.into_iter().collect::<BTreeSet<_>>(),
        race_window: Duration::from_millis(args.race_window_ms),
    };
    match serve(args.port, config) {
        Ok(handle) => {
            println!("bookshop listening on {}", handle.base_url());
            handle.join();
        }
        Err(e) => {
            eprintln!("bookshop-sut: {e}");
            std::process::exit(1);
        }
    }
}
