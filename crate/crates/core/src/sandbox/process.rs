//! Running one command with a wall-clock limit and capped output capture.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub(crate) struct PhaseResult {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_ms: u64,
}

impl PhaseResult {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

/// Reads everything from `r`, keeping only the first `cap` bytes.
fn drain_capped(mut r: impl Read, cap: usize) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    kept
}

fn kill_group(pgid: u32) {
    // SAFETY: plain syscall; a stale group id only yields ESRCH.
    unsafe {
        libc::kill(-(pgid as i32), libc::SIGKILL);
    }
}

/// Runs `argv` in `cwd` inside its own process group. On timeout the whole
/// group is killed. Leftover background children are killed too once the
/// main process exits.
pub(crate) fn run_phase(argv: &[String], cwd: &Path, timeout: Duration, cap: usize) -> io::Result<PhaseResult> {
    let (prog, args) = argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
    let started = Instant::now();
    let mut child = Command::new(prog)
        .args(args)
        .current_dir(cwd)
        .env("TMPDIR", cwd)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let pgid = child.id();
    let out = child.stdout.take().expect("piped stdout");
    let err = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || drain_capped(out, cap));
    let err_reader = thread::spawn(move || drain_capped(err, cap));

    let deadline = started + timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        let now = Instant::now();
        if now >= deadline {
            timed_out = true;
            kill_group(pgid);
            break child.wait()?;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(5)));
    };
    kill_group(pgid);
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let exit_code = status.code().or_else(|| status.signal().map(|s| 128 + s));
    Ok(PhaseResult {
        exit_code: if timed_out { None } else { exit_code },
        timed_out,
        stdout,
        stderr,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn captures_and_caps_output() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_phase(&sh("yes hello | head -c 100000; echo oops >&2; exit 3"), dir.path(), Duration::from_secs(5), 1024).unwrap();
        assert_eq!(r.exit_code, Some(3));
        assert_eq!(r.stdout.len(), 1024);
        assert_eq!(r.stderr, b"oops\n");
    }

    #[test]
    fn timeout_kills_process_tree() {
        let dir = tempfile::tempdir().unwrap();
        let t = Instant::now();
        let r = run_phase(&sh("sleep 30 & sleep 30; wait"), dir.path(), Duration::from_millis(200), 1024).unwrap();
        assert!(r.timed_out);
        assert!(t.elapsed() < Duration::from_millis(1500), "{:?}", t.elapsed());
    }

    #[test]
    fn missing_program_is_spawn_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_phase(&["/nonexistent/bin".into()], dir.path(), Duration::from_secs(1), 10).is_err());
    }
}
