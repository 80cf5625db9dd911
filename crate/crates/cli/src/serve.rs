//! Wire-protocol servers over the configured backends.

use std::io::{BufRead, Write};

use anyhow::{Context as _, Result};
use intervene_core::adapters::{protocol, Backends};

/// One reply line per request line until stdin closes.
pub fn stdio(backends: &Backends) -> Result<()> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(stdout, "{}", protocol::dispatch_line(backends, &line))?;
        stdout.flush()?;
    }
    Ok(())
}

/// `POST /<op>`; error replies carry status 422 so clients do not retry
/// them. Prints the bound address before serving.
pub fn http(backends: &Backends, addr: &str) -> Result<()> {
    let server = tiny_http::Server::http(addr).map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
    println!("listening on http://{}", server.server_addr());
    std::io::stdout().flush()?;
    for mut req in server.incoming_requests() {
        let op = req.url().trim_start_matches('/').to_string();
        let mut body = String::new();
        let reply = if *req.method() != tiny_http::Method::Post {
            serde_json::json!({ "error": "use POST /<op>" })
        } else if let Err(e) = req.as_reader().read_to_string(&mut body) {
            serde_json::json!({ "error": format!("reading body: {e}") })
        } else {
            match serde_json::from_str(&body) {
                Ok(v) => protocol::dispatch(backends, &op, v),
                Err(e) => serde_json::json!({ "error": format!("body is not JSON: {e}") }),
            }
        };
        let status = if reply.get("error").is_some() { 422 } else { 200 };
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        let response = tiny_http::Response::from_string(reply.to_string())
            .with_status_code(status)
            .with_header(header);
        if let Err(e) = req.respond(response) {
            log::warn!("responding to /{op}: {e}");
        }
    }
    Ok(())
}
