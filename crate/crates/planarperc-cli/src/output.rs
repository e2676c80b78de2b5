//! Output plumbing shared by every subcommand: config hashing, versioned
//! header comments, CSV and JSON emission, and the optional gnuplot sibling.
//!
//! Outputs are byte-deterministic for a fixed argv + seed: floats are printed
//! with Rust's shortest round-trip formatting, JSON maps sort their keys, and
//! wall-clock timing never enters a file.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 16 hex chars of sha256 of the canonical (sorted-key) JSON encoding
/// of the resolved configuration. Identifies which invocation produced a
/// file without embedding volatile data.
pub fn config_hash(config: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(config.to_string().as_bytes());
    let digest = h.finalize();
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Where a subcommand's primary output goes, plus the plot-script flag.
pub struct Sink {
    pub out: Option<PathBuf>,
    pub plot: bool,
}

impl Sink {
    fn write_bytes(&self, bytes: &[u8]) -> std::io::Result<()> {
        match &self.out {
            Some(path) => std::fs::write(path, bytes),
            None => std::io::stdout().lock().write_all(bytes),
        }
    }

    /// Single JSON object with a "meta" member carrying version + config hash.
    pub fn emit_json(
        &self,
        config: &serde_json::Value,
        mut payload: serde_json::Value,
    ) -> std::io::Result<()> {
        let meta = serde_json::json!({
            "version": VERSION,
            "config_hash": config_hash(config),
        });
        payload
            .as_object_mut()
            .expect("JSON payloads are objects")
            .insert("meta".into(), meta);
        let mut text = serde_json::to_string_pretty(&payload).expect("serializable payload");
        text.push('\n');
        self.write_bytes(text.as_bytes())
    }

    /// CSV with '#' header comments (version, config hash, extra notes), a
    /// header row, '.' decimals, and '\n' line endings. With `plot` set and a
    /// file sink, writes a gnuplot script next to the data.
    pub fn emit_csv(
        &self,
        config: &serde_json::Value,
        notes: &[String],
        header: &[&str],
        rows: &[Vec<String>],
    ) -> std::io::Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "# planarperc {VERSION}");
        let _ = writeln!(text, "# config {}", config_hash(config));
        for note in notes {
            let _ = writeln!(text, "# {note}");
        }
        let _ = writeln!(text, "{}", header.join(","));
        for row in rows {
            let _ = writeln!(text, "{}", row.join(","));
        }
        self.write_bytes(text.as_bytes())?;
        if self.plot {
            if let Some(path) = &self.out {
                let script_path = PathBuf::from(format!("{}.gnuplot", path.display()));
                std::fs::write(&script_path, gnuplot_script(path, header))?;
            }
        }
        Ok(())
    }
}

fn gnuplot_script(csv: &std::path::Path, header: &[&str]) -> String {
    let name = csv
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| csv.display().to_string());
    let ylabel = header.get(1).copied().unwrap_or("y");
    let xlabel = header.first().copied().unwrap_or("x");
    format!(
        "set datafile separator ','\n\
         set datafile commentschars '#'\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         set logscale xy\n\
         plot '{name}' every ::1 using 1:2 with linespoints title '{ylabel}'\n"
    )
}

/// Shortest round-trip decimal for a float; "NA" for non-finite values so
/// CSV consumers never see "NaN"/"inf" spellings that vary across tools.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".to_string()
    }
}

pub fn fmt_opt_u64(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".to_string())
}

pub fn fmt_bool(b: bool) -> String {
    if b { "1".to_string() } else { "0".to_string() }
}

/// Errors surfaced by the binary, partitioned by exit code:
/// 2 for configuration problems, 3 for numeric/model failures, 4 for a
/// failed verification suite.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Lib(planarperc::Error),
    Io(std::io::Error),
    VerifyFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Lib(e) => match e {
                planarperc::Error::InvalidWeights(_)
                | planarperc::Error::DomainError(_)
                | planarperc::Error::Io(_) => 2,
                _ => 3,
            },
            CliError::VerifyFailed(_) => 4,
        }
    }

    pub fn render(&self) -> String {
        match self {
            CliError::Config(msg) => format!("error[Config]: {msg}"),
            CliError::Lib(e) => format!("error[{}]: {e}", lib_error_name(e)),
            CliError::Io(e) => format!("error[Io]: {e}"),
            CliError::VerifyFailed(n) => format!("error[VerifyFailed]: {n} criteria failed"),
        }
    }
}

impl From<planarperc::Error> for CliError {
    fn from(e: planarperc::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub fn lib_error_name(e: &planarperc::Error) -> &'static str {
    use planarperc::Error::*;
    match e {
        NotAdmissible(_) => "NotAdmissible",
        Degenerate(_) => "Degenerate",
        InvalidWeights(_) => "InvalidWeights",
        TailTruncationTooCoarse(_) => "TailTruncationTooCoarse",
        Inconclusive(_) => "Inconclusive",
        BracketFailure(_) => "BracketFailure",
        DomainError(_) => "DomainError",
        RootFailure { .. } => "RootFailure",
        BudgetExceeded(_) => "BudgetExceeded",
        NonconvergentTail(_) => "NonconvergentTail",
        WindowOverflow(_) => "WindowOverflow",
        TableExhausted(_) => "TableExhausted",
        InsufficientTailSamples(_) => "InsufficientTailSamples",
        WindowTooSmall(_) => "WindowTooSmall",
        Io(_) => "Io",
    }
}
