/**
 * Shared types for the in-page capture probe.
 *
 * The media-key interfaces are structural so the probe runs unchanged
 * against the real browser API or a test double: anything with the same
 * shape works.
 */

export interface ProbeConfig {
  /** Ingestion endpoint, e.g. "https://auditor.example/ingest". */
  ingest_url: string;
  /** Key-system identifier passed to requestMediaKeySystemAccess. */
  key_system_id: string;
  /** Initialization data handed to generateRequest (non-empty). */
  init_data: Uint8Array;
  /** Base-64 service certificate, set on the CDM when provided. */
  server_certificate_b64?: string;
  /** Label stamped on every posted record. */
  source_label: string;
  /**
   * License endpoint. When set, captured license requests are forwarded
   * there and the response fed back to the session, which is what lets
   * renewal events fire. When unset the probe only captures.
   */
  license_url?: string;
  /** How long to keep listening for (renewal) messages, in ms. */
  capture_window_ms?: number;
}

/** One capture, wire-compatible with the auditor's POST /ingest. */
export interface IngestRecordPayload {
  source: string;
  kind: string;
  body_b64: string;
  claimed_ua?: string;
  session_id_hex?: string;
  session_type?: string;
}

export interface ProbeRunSummary {
  source_label: string;
  outcome: "captured" | "unsupported" | "permission_denied";
  session_id: string | null;
  session_type: string | null;
  records_posted: number;
  posts_failed: number;
}

// ---- minimal structural media-key API ------------------------------------

export interface MessageEventLike {
  messageType: string;
  message: ArrayBuffer;
}

export interface MediaKeySessionLike {
  readonly sessionId: string;
  addEventListener(
    type: "message",
    listener: (event: MessageEventLike) => void,
  ): void;
  generateRequest(initDataType: string, initData: Uint8Array): Promise<void>;
  load(sessionId: string): Promise<boolean>;
  update(response: Uint8Array): Promise<void>;
  close(): Promise<void>;
}

export interface MediaKeysLike {
  createSession(sessionType: string): MediaKeySessionLike;
  setServerCertificate(certificate: Uint8Array): Promise<boolean>;
}

export interface SystemConfigLike {
  initDataTypes?: string[];
  sessionTypes?: string[];
  audioCapabilities?: { contentType: string }[];
  videoCapabilities?: { contentType: string }[];
}

export interface KeySystemAccessLike {
  getConfiguration(): SystemConfigLike;
  createMediaKeys(): Promise<MediaKeysLike>;
}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string | Uint8Array;
  },
) => Promise<{ ok: boolean; status: number; arrayBuffer(): Promise<ArrayBuffer> }>;

/** Everything the probe touches in its host; injectable for tests. */
export interface ProbeEnvironment {
  requestMediaKeySystemAccess(
    keySystem: string,
    configurations: SystemConfigLike[],
  ): Promise<KeySystemAccessLike>;
  fetch: FetchLike;
  userAgent: string;
  /** Sleep hook so tests can collapse the capture window. */
  wait?: (ms: number) => Promise<void>;
}
