//! Standalone mock servers for manual runs of the CLI against local
//! fixtures. Prints the URLs to put into the pipeline config.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use edgar_corpus_testkit::{EdgarMock, ExtractorMock, S3Mock};

#[derive(Parser)]
#[command(name = "edgar-mock", about = "Local mock servers for offline pipeline runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a fixture tree as the EDGAR archive.
    Edgar {
        /// Directory served as the archive root.
        #[arg(long, default_value = "fixtures/edgar-archive")]
        archive_root: PathBuf,
        /// Directory holding company metadata fixtures (v1/<cik>.xml ...).
        #[arg(long, default_value = "fixtures/company-metadata")]
        company_root: PathBuf,
    },
    /// Run an in-memory S3-compatible endpoint.
    S3 {
        #[arg(long, default_value = "edgar")]
        bucket: String,
    },
    /// Run a stand-in text extraction service.
    Extractor,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Edgar { archive_root, company_root } => {
            let mock = EdgarMock::start(&archive_root, &company_root)?;
            println!("EDGAR archive mock listening");
            println!("  base_url             = {}", mock.base_url());
            println!("  company_metadata_url = {}", mock.company_metadata_url());
            println!("  fault control        = {}__mock/set?throttle_next=1", mock.base_url());
            park();
        }
        Command::S3 { bucket } => {
            let mock = S3Mock::start(&bucket)?;
            println!("S3-compatible mock listening");
            println!("  endpoint = {}", mock.endpoint());
            println!("  bucket   = {}", mock.bucket());
            park();
        }
        Command::Extractor => {
            let mock = ExtractorMock::start()?;
            println!("extraction service mock listening");
            println!("  url = {}", mock.url());
            park();
        }
    }
}

fn park() -> ! {
    loop {
        std::thread::park();
    }
}
