//! Reference adapter for protocol tests: scores each text by hashing it.
//!
//! Speaks NDJSON on stdin/stdout by default, or `POST /classify` with `--http`.

use std::io::{self, BufReader};
use std::process::ExitCode;

use biascorpus_core::classifiers::mock::{router, run_stdio, serve as serve_on, MockOptions};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "mock-adapter", version, about = "Hash-scoring adapter for protocol tests")]
struct Args {
    /// Answer with an error for texts containing this substring.
    #[arg(long)]
    fail_on: Option<String>,
    /// Maximum per-request delay in milliseconds; responses leave out of order.
    #[arg(long, default_value_t = 0)]
    jitter_ms: u64,
    /// Exit after reading this many requests.
    #[arg(long)]
    exit_after: Option<usize>,
    /// Serve HTTP on this address instead of stdin/stdout.
    #[arg(long)]
    http: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = MockOptions {
        fail_on: args.fail_on,
        jitter_ms: args.jitter_ms,
        exit_after: args.exit_after,
    };
    let result = match args.http {
        Some(addr) => serve(&addr, opts),
        None => run_stdio(BufReader::new(io::stdin()), io::stdout(), &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-adapter: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(addr: &str, opts: MockOptions) -> io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("mock-adapter listening on http://{}", listener.local_addr()?);
        serve_on(listener, router(opts)).await
    })
}
