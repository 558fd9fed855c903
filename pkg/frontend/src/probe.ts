/**
 * In-page capture probe.
 *
 * probeRun asks the browser for key-system access (persistent-license
 * preferred, temporary fallback), generates a license request from the
 * configured init data, and posts every license/renewal message event to
 * the auditor's ingest endpoint together with the page's user-agent
 * string, the session id, and the session type. The probe itself never
 * looks inside the captured bytes; all interpretation is server-side, so
 * the probe behaves identically on every browser.
 *
 * probeReopen answers the stateful-tracking question: given session ids
 * gathered on earlier visits, it tries to load each one and reports the
 * ids that still open.
 */

import type {
  FetchLike,
  IngestRecordPayload,
  KeySystemAccessLike,
  MediaKeySessionLike,
  MediaKeysLike,
  ProbeConfig,
  ProbeEnvironment,
  ProbeRunSummary,
  SystemConfigLike,
} from "./types.js";

const PERSISTENT = "persistent-license";
const TEMPORARY = "temporary";
const MAX_POST_ATTEMPTS = 3;

const KIND_BY_MESSAGE_TYPE: Record<string, string> = {
  "license-request": "LICENSE_REQUEST",
  "license-renewal": "RENEWAL_REQUEST",
};

export function defaultEnvironment(): ProbeEnvironment {
  const g = globalThis as Record<string, unknown>;
  const navigator = g.navigator as
    | {
        requestMediaKeySystemAccess?: (
          keySystem: string,
          configs: SystemConfigLike[],
        ) => Promise<KeySystemAccessLike>;
        userAgent?: string;
      }
    | undefined;
  return {
    requestMediaKeySystemAccess: navigator?.requestMediaKeySystemAccess
      ? navigator.requestMediaKeySystemAccess.bind(navigator)
      : () => Promise.reject(notSupported("no media-key API in this host")),
    fetch: (g.fetch as FetchLike | undefined) ?? rejectFetch,
    userAgent: navigator?.userAgent ?? "unknown",
  };
}

function notSupported(message: string): Error {
  const error = new Error(message);
  error.name = "NotSupportedError";
  return error;
}

const rejectFetch: FetchLike = () => Promise.reject(new Error("no fetch in this host"));

export function toBase64(bytes: Uint8Array): string {
  let binary = "";
  for (const byte of bytes) binary += String.fromCharCode(byte);
  // btoa exists in pages; Buffer is the node path for tests
  const g = globalThis as Record<string, unknown>;
  if (typeof g.btoa === "function") return (g.btoa as (s: string) => string)(binary);
  return (g.Buffer as typeof Buffer).from(bytes).toString("base64");
}

async function sleep(env: ProbeEnvironment, ms: number): Promise<void> {
  if (env.wait) return env.wait(ms);
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Fire-and-forget post with at most MAX_POST_ATTEMPTS tries. */
export async function postRecord(
  fetchImpl: FetchLike,
  url: string,
  record: IngestRecordPayload,
): Promise<boolean> {
  for (let attempt = 1; attempt <= MAX_POST_ATTEMPTS; attempt += 1) {
    try {
      const response = await fetchImpl(url, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(record),
      });
      if (response.ok) return true;
    } catch {
      // network hiccup: retry until the attempt budget runs out
    }
  }
  return false;
}

interface AccessResult {
  access: KeySystemAccessLike;
  sessionType: string;
}

/** Persistent-license first; the temporary config is the fallback row. */
async function requestAccess(
  env: ProbeEnvironment,
  cfg: ProbeConfig,
): Promise<AccessResult> {
  const capabilities = [{ contentType: 'video/mp4; codecs="avc1.42E01E"' }];
  const configs: SystemConfigLike[] = [
    {
      initDataTypes: ["cenc"],
      sessionTypes: [PERSISTENT],
      videoCapabilities: capabilities,
    },
    {
      initDataTypes: ["cenc"],
      sessionTypes: [TEMPORARY],
      videoCapabilities: capabilities,
    },
  ];
  const access = await env.requestMediaKeySystemAccess(cfg.key_system_id, configs);
  const granted = access.getConfiguration().sessionTypes ?? [TEMPORARY];
  return {
    access,
    sessionType: granted.includes(PERSISTENT) ? PERSISTENT : TEMPORARY,
  };
}

function statusRecord(cfg: ProbeConfig, env: ProbeEnvironment, kind: string): IngestRecordPayload {
  return {
    source: cfg.source_label,
    kind,
    body_b64: "",
    claimed_ua: env.userAgent,
  };
}

export async function probeRun(
  cfg: ProbeConfig,
  env: ProbeEnvironment = defaultEnvironment(),
): Promise<ProbeRunSummary> {
  const summary: ProbeRunSummary = {
    source_label: cfg.source_label,
    outcome: "captured",
    session_id: null,
    session_type: null,
    records_posted: 0,
    posts_failed: 0,
  };
  const post = async (record: IngestRecordPayload) => {
    if (await postRecord(env.fetch, cfg.ingest_url, record)) {
      summary.records_posted += 1;
    } else {
      summary.posts_failed += 1;
    }
  };

  let granted: AccessResult;
  try {
    granted = await requestAccess(env, cfg);
  } catch (error) {
    const name = (error as Error)?.name ?? "";
    if (name === "NotSupportedError") {
      summary.outcome = "unsupported";
      await post(statusRecord(cfg, env, "UNSUPPORTED"));
    } else {
      summary.outcome = "permission_denied";
      await post(statusRecord(cfg, env, "PERM"));
    }
    return summary;
  }

  const mediaKeys = await granted.access.createMediaKeys();
  if (cfg.server_certificate_b64) {
    try {
      await mediaKeys.setServerCertificate(fromBase64(cfg.server_certificate_b64));
    } catch {
      // certificate refused: continue, the CDM may have a default
    }
  }

  const session = mediaKeys.createSession(granted.sessionType);
  summary.session_type = granted.sessionType;

  const pending: Promise<void>[] = [];
  session.addEventListener("message", (event) => {
    const kind = KIND_BY_MESSAGE_TYPE[event.messageType];
    if (!kind) return; // other message types are not license traffic
    const body = new Uint8Array(event.message);
    pending.push(
      post({
        source: cfg.source_label,
        kind,
        body_b64: toBase64(body), // forwarded verbatim, never parsed
        claimed_ua: env.userAgent,
        session_id_hex: session.sessionId,
        session_type: granted.sessionType,
      }),
    );
    if (kind === "LICENSE_REQUEST" && cfg.license_url) {
      pending.push(completeAcquisition(env.fetch, cfg.license_url, session, body));
    }
  });

  await session.generateRequest("cenc", cfg.init_data);
  summary.session_id = session.sessionId || null;  // assigned by generateRequest
  await sleep(env, cfg.capture_window_ms ?? 4000);
  await Promise.allSettled(pending);
  await session.close();
  return summary;
}

/** Forward the license request so the session gets real keys (and, with
 * renewal-forcing policies, later renewal events). */
async function completeAcquisition(
  fetchImpl: FetchLike,
  licenseUrl: string,
  session: MediaKeySessionLike,
  request: Uint8Array,
): Promise<void> {
  try {
    const response = await fetchImpl(licenseUrl, { method: "POST", body: request });
    if (!response.ok) return;
    const bytes = new Uint8Array(await response.arrayBuffer());
    await session.update(bytes);
  } catch {
    // capture-only degradation: the request itself was already posted
  }
}

export async function probeReopen(
  cfg: ProbeConfig,
  sessionIds: string[],
  env: ProbeEnvironment = defaultEnvironment(),
): Promise<string[]> {
  let mediaKeys: MediaKeysLike;
  try {
    const granted = await requestAccess(env, cfg);
    mediaKeys = await granted.access.createMediaKeys();
  } catch {
    return []; // no access, nothing to probe; failures are data
  }
  const matched: string[] = [];
  for (const sessionId of sessionIds) {
    const session = mediaKeys.createSession(PERSISTENT);
    let opened = false;
    try {
      opened = await session.load(sessionId);
    } catch {
      opened = false; // a failed load is an expected non-signal
    }
    if (opened) {
      matched.push(sessionId);
      await postRecord(env.fetch, cfg.ingest_url, {
        source: cfg.source_label,
        kind: "SESSION_MATCH",
        body_b64: "",
        claimed_ua: env.userAgent,
        session_id_hex: sessionId,
        session_type: PERSISTENT,
      });
    }
    try {
      await session.close();
    } catch {
      // some hosts refuse closing never-loaded sessions; ignore
    }
  }
  return matched;
}

export function fromBase64(text: string): Uint8Array {
  const g = globalThis as Record<string, unknown>;
  if (typeof g.atob === "function") {
    const binary = (g.atob as (s: string) => string)(text);
    const bytes = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i += 1) bytes[i] = binary.charCodeAt(i);
    return bytes;
  }
  return new Uint8Array((g.Buffer as typeof Buffer).from(text, "base64"));
}
