//! Wires the simulator, bridge, tour engine and gateway into one process.

use std::fs::{self, OpenOptions};
use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::bridge::{bridge_app, Router};
use crate::clock::WallClock;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::gateway::{gateway_app, GatewayOptions};
use crate::runtime::Runtime;
use crate::services::{self, SharedRuntime};
use crate::tour::TourStore;

/// Loads the store at `path`, creating an empty one if the file does not
/// exist, and checks that the location is writable.
pub fn open_store(path: &Path) -> Result<TourStore> {
    let store = if path.exists() {
        TourStore::load(path)?
    } else {
        let store = TourStore::default();
        store.save(path)?;
        store
    };
    probe_writable(path)?;
    Ok(store)
}

fn probe_writable(path: &Path) -> Result<()> {
    let mut probe = path.as_os_str().to_owned();
    probe.push(".probe");
    let probe = Path::new(&probe);
    OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(probe)
        .map_err(|e| {
            Error::io(
                format!("store location {} is not writable", path.display()),
                e,
            )
        })?;
    let _ = fs::remove_file(probe);
    Ok(())
}

async fn bind(host: &str, port: u16, what: &str) -> Result<TcpListener> {
    TcpListener::bind((host, port))
        .await
        .map_err(|e| Error::io(format!("binding {what} on {host}:{port}"), e))
}

/// A running system. Dropping it leaves the tasks running; call
/// [`Server::shutdown`] to stop them.
pub struct Server {
    http_addr: SocketAddr,
    bridge_addr: SocketAddr,
    runtime: SharedRuntime,
    router: Router,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    pub async fn start(config: &Config) -> Result<Server> {
        config.validate()?;
        let store = open_store(&config.store_path)?;

        // Bind both ports before spawning anything so a conflict leaves
        // nothing half-started.
        let http = bind(&config.bind, config.http_port, "HTTP gateway").await?;
        let bridge = bind(&config.bind, config.bridge_port, "bridge").await?;
        let http_addr = http
            .local_addr()
            .map_err(|e| Error::io("reading HTTP address", e))?;
        let bridge_addr = bridge
            .local_addr()
            .map_err(|e| Error::io("reading bridge address", e))?;

        let runtime = Runtime::new(store, config.sim.clone(), Box::new(WallClock))
            .with_store_path(config.store_path.clone());
        let runtime = services::shared(runtime);
        let router = Router::new();
        services::register_services(&router, &runtime)?;

        let options = GatewayOptions {
            cors_origins: config.cors_origins.clone(),
            static_dir: config.static_dir.clone(),
        };
        let gateway = gateway_app(router.clone(), &options);
        let bridge_routes = bridge_app(router.clone());

        let mut tasks = Vec::new();
        tasks.push(tokio::spawn(async move {
            if let Err(e) = axum::serve(http, gateway).await {
                warn!(error = %e, "HTTP gateway stopped");
            }
        }));
        tasks.push(tokio::spawn(async move {
            if let Err(e) = axum::serve(bridge, bridge_routes).await {
                warn!(error = %e, "bridge stopped");
            }
        }));
        tasks.push(services::spawn_tick_loop(runtime.clone(), router.clone()));

        info!(%http_addr, %bridge_addr, store = %config.store_path.display(), "listening");
        Ok(Server {
            http_addr,
            bridge_addr,
            runtime,
            router,
            tasks,
        })
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn bridge_addr(&self) -> SocketAddr {
        self.bridge_addr
    }

    pub fn runtime(&self) -> &SharedRuntime {
        &self.runtime
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub async fn shutdown(self) {
        for task in &self.tasks {
            task.abort();
        }
        for task in self.tasks {
            let _ = task.await;
        }
    }
}

/// Runs the whole system until `stop` resolves.
pub async fn serve(config: Config, stop: impl Future<Output = ()>) -> Result<()> {
    let server = Server::start(&config).await?;
    stop.await;
    info!("shutting down");
    server.shutdown().await;
    Ok(())
}
