//! Tokio websocket front end: one task and one [`Session`] per connection.

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::{Error as WsError, Message};

use crate::session::{Session, SessionConfig};

/// Rollout streaming period.
pub const TICK: Duration = Duration::from_millis(100);

/// Accepts connections until the listener fails.
pub async fn serve(listener: TcpListener, cfg: SessionConfig) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let cfg = cfg.clone();
        tokio::spawn(async move {
            tracing::info!(%peer, "session opened");
            match serve_connection(stream, cfg).await {
                Ok(()) => tracing::info!(%peer, "session closed"),
                Err(e) => tracing::warn!(%peer, error = %e, "session ended with error"),
            }
        });
    }
}

/// Runs one session over an accepted stream. Dropping the session on return
/// discards any recording that was not stopped.
pub async fn serve_connection<S>(stream: S, cfg: SessionConfig) -> Result<(), WsError>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let mut session = Session::new(cfg);
    let mut ticker = tokio::time::interval(TICK);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        let out = tokio::select! {
            incoming = rx.next() => match incoming {
                None | Some(Ok(Message::Close(_))) => break,
                Some(Err(e)) => return Err(e),
                Some(Ok(Message::Text(text))) => session.handle_text(text.as_str()),
                Some(Ok(Message::Binary(_))) => session.handle_text("<binary frame>"),
                Some(Ok(_)) => Vec::new(),
            },
            _ = ticker.tick(), if session.is_streaming() => session.tick().into_iter().collect(),
        };
        for m in out {
            tx.send(Message::Text(m.to_text().into())).await?;
        }
    }
    Ok(())
}
