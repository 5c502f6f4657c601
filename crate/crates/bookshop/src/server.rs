use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::response::Response;
use axum::Router;
use tokio::sync::oneshot;

use crate::{Bookshop, BookshopConfig};

const MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("failed to start server: {0}")]
    Io(#[from] std::io::Error),
}

/// A bookshop served over HTTP on a background thread. Dropping the handle
/// stops the server.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    shop: Arc<Bookshop>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shop(&self) -> &Arc<Bookshop> {
        &self.shop
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves a fresh bookshop on `127.0.0.1:port` (`0` picks a free port).
pub fn serve(port: u16, config: BookshopConfig) -> Result<ServerHandle, ServeError> {
    serve_shop(port, Arc::new(Bookshop::new(config)))
}

/// Serves an existing bookshop instance.
pub fn serve_shop(port: u16, shop: Arc<Bookshop>) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(port)
        } else {
            ServeError::Io(e)
        }
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()?;

    let (tx, rx) = oneshot::channel::<()>();
    let app = Router::new().fallback(dispatch).with_state(shop.clone());
    let thread = std::thread::Builder::new()
        .name("bookshop-server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;

    Ok(ServerHandle {
        addr,
        shop,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

async fn dispatch(State(shop): State<Arc<Bookshop>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b.to_vec(),
        Err(_) => {
            return Response::builder()
                .status(413)
                .body(Body::empty())
                .expect("valid response")
        }
    };
    let req = http::Request::from_parts(parts, bytes);
    let resp = tokio::task::spawn_blocking(move || shop.handle(req))
        .await
        .expect("handler panicked");
    let (parts, body) = resp.into_parts();
    Response::from_parts(parts, Body::from(body))
}
