//! Central model server: serves the current model file over TCP and bumps
//! the announced version whenever the file's content changes (hot swap).

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::swarm::protocol::{parse_model_request, write_model_request, ModelAnnouncement};

struct Served {
    version: u32,
    bytes: Vec<u8>,
}

/// Running server; dropping the handle leaves the thread running until
/// `shutdown` is called.
pub struct ModelServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ModelServer {
    /// Bind `bind_addr` (use port 0 for an ephemeral port) and serve the
    /// model file. The file must exist and be readable at startup.
    pub fn start<A: ToSocketAddrs>(model_path: PathBuf, bind_addr: A) -> Result<ModelServer> {
        let initial = std::fs::read(&model_path)
            .map_err(|e| Error::Config(format!("cannot read model {}: {e}", model_path.display())))?;
        let listener = TcpListener::bind(bind_addr)?;
        let addr = listener.local_addr()?;
        // Accept with a timeout so the stop flag is polled.
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(Mutex::new(Served { version: 1, bytes: initial }));

        let stop_t = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            while !stop_t.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        // Refresh from disk per request; a changed file bumps
                        // the version exactly once per swap.
                        if let Ok(bytes) = std::fs::read(&model_path) {
                            let mut s = served.lock().unwrap();
                            if bytes != s.bytes {
                                s.version += 1;
                                s.bytes = bytes;
                            }
                        }
                        let snapshot = {
                            let s = served.lock().unwrap();
                            ModelAnnouncement { version: s.version, payload: s.bytes.clone() }
                        };
                        let _ = serve_one(stream, &snapshot);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(ModelServer { addr, stop, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ModelServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_one(stream: TcpStream, ann: &ModelAnnouncement) -> Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    std::io::BufRead::read_line(&mut reader, &mut line)?;
    let _have = parse_model_request(&line)?;
    let mut writer = BufWriter::new(stream);
    ann.write_to(&mut writer)
}

/// Fetch and checksum-validate the current model. Errors leave the caller's
/// previous model untouched by construction: nothing is returned on failure.
pub fn fetch_model(addr: SocketAddr, have_version: Option<u32>) -> Result<ModelAnnouncement> {
    let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    write_model_request(&mut writer, have_version)?;
    let mut reader = BufReader::new(stream);
    ModelAnnouncement::read_from(&mut reader)
}

/// Fetch with bounded retries, keeping the old model on persistent failure.
pub fn fetch_model_or_keep(
    addr: SocketAddr,
    current: Option<ModelAnnouncement>,
    retries: usize,
) -> Option<ModelAnnouncement> {
    let have = current.as_ref().map(|a| a.version);
    for _ in 0..=retries {
        if let Ok(ann) = fetch_model(addr, have) {
            return Some(ann);
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    use crate::neural::PolicyValueNet;

    #[test]
    fn fetch_round_trips_a_real_model() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.bin");
        let net = PolicyValueNet::new(3, &mut ChaCha8Rng::seed_from_u64(1));
        net.save(&path).unwrap();

        let server = ModelServer::start(path.clone(), "127.0.0.1:0").unwrap();
        let ann = fetch_model(server.addr(), None).unwrap();
        assert_eq!(ann.version, 1);
        let back = PolicyValueNet::from_bytes(&ann.payload).unwrap();
        let obs = vec![0.05; net.input_dim];
        assert_eq!(net.forward(&obs).unwrap(), back.forward(&obs).unwrap());
        server.shutdown();
    }

    #[test]
    fn hot_swap_bumps_version_once() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.bin");
        let net1 = PolicyValueNet::new(2, &mut ChaCha8Rng::seed_from_u64(2));
        net1.save(&path).unwrap();
        let server = ModelServer::start(path.clone(), "127.0.0.1:0").unwrap();

        assert_eq!(fetch_model(server.addr(), None).unwrap().version, 1);
        // Several fetches without a change keep the version stable.
        assert_eq!(fetch_model(server.addr(), Some(1)).unwrap().version, 1);

        let net2 = PolicyValueNet::new(2, &mut ChaCha8Rng::seed_from_u64(3));
        net2.save(&path).unwrap();
        assert_eq!(fetch_model(server.addr(), Some(1)).unwrap().version, 2);
        assert_eq!(fetch_model(server.addr(), Some(2)).unwrap().version, 2);
        server.shutdown();
    }

    #[test]
    fn failed_fetch_keeps_old_model() {
        // Nobody listens on this address (bind then drop to reserve then free).
        let dead = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let old = ModelAnnouncement { version: 9, payload: vec![1, 2, 3] };
        let kept = fetch_model_or_keep(dead, Some(old.clone()), 1);
        assert_eq!(kept, Some(old));
        assert_eq!(fetch_model_or_keep(dead, None, 0), None);
    }

    #[test]
    fn missing_model_file_is_a_config_error() {
        assert!(ModelServer::start(PathBuf::from("/nonexistent/model.bin"), "127.0.0.1:0").is_err());
    }
}
