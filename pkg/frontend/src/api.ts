// Typed client for the gateway HTTP API (api.md). Every method maps to
// exactly one endpoint; no protocol logic lives in the browser.

export interface AuthResult {
  token: string;
  user_id: string;
  role: string;
}

export interface Offer {
  type: "offer";
  key: string;
  rider_id: string;
  pickup: string;
  at: number;
}

export interface Progress {
  type: "progress";
  state: string;
  at?: number;
  ride_id?: string;
  error?: string;
}

export type GatewayEvent = Offer | Progress;

export interface ActiveRide {
  key: string;
  rider_id: string;
  ride_id: string;
  pickup: string;
}

export interface FlowStatus {
  states: string[];
  progress: Array<Record<string, unknown>>;
  ride_id: string | null;
  finished: boolean;
  error: string | null;
}

export interface RiderStatus {
  flows: Record<string, FlowStatus>;
}

export interface Health {
  ok: boolean;
  mode: string;
  peers: number;
  orgs: string[];
  height: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function envelope(response: Response): Promise<never> {
  let code = "HttpError";
  let message = `${response.status}`;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      message = body.detail;
    } else if (body.detail && typeof body.detail === "object") {
      const d = body.detail as { code?: string; error?: string };
      code = d.code ?? code;
      message = d.error ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, code, message);
}

export class ApiClient {
  token = "";

  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) await envelope(response);
    return (await response.json()) as T;
  }

  async register(org: string, user: string, password: string, name = ""): Promise<AuthResult> {
    const auth = await this.call<AuthResult>("POST", "/register", { org, user, password, name });
    this.token = auth.token;
    return auth;
  }

  async login(org: string, user: string, password: string, role: string): Promise<AuthResult> {
    const auth = await this.call<AuthResult>("POST", "/login", { org, user, password, role });
    this.token = auth.token;
    return auth;
  }

  upgrade(name: string, make: string, model: string, year: number): Promise<{ ok: boolean }> {
    return this.call("POST", "/driver/upgrade", { name, make, model, year });
  }

  driverStart(location: string, rescan: boolean): Promise<{ started: boolean; open_requests: Offer[] }> {
    return this.call("POST", "/driver/start", { location, rescan });
  }

  respond(key: string, accept: boolean): Promise<{ denied?: boolean; ride?: ActiveRide }> {
    return this.call("POST", "/driver/respond", { key, accept });
  }

  pickup(key: string, location: string): Promise<{ ok: boolean; onboard: string[] }> {
    return this.call("POST", "/driver/pickup", { key, location });
  }

  dropoff(key: string, location: string): Promise<{ ride_id: string; onboard: string[] }> {
    return this.call("POST", "/driver/dropoff", { key, location });
  }

  requestRide(from: string, to: string): Promise<{ key: string }> {
    return this.call("POST", "/rider/request", { from, to });
  }

  riderStatus(): Promise<RiderStatus> {
    return this.call("GET", "/rider/status");
  }

  rides(): Promise<{ rides: Array<Record<string, unknown>> }> {
    return this.call("GET", "/rides");
  }

  health(): Promise<Health> {
    return this.call("GET", "/health");
  }

  // EventSource cannot set headers, so the stream authenticates by query
  eventsUrl(): string {
    return `${this.baseUrl}/events?token=${encodeURIComponent(this.token)}`;
  }
}
