export interface ProvenanceEntry {
  chunk_id: string;
  kind: string;
  provenance: string;
  text?: string;
}

export interface ChatResponse {
  session_id: string;
  answer: string;
  contexts: ProvenanceEntry[];
  commands_executed: string[];
}

export interface HealthResponse {
  status: string;
  corpus_chunks: number;
  registry_size: number;
}

export interface UiMessage {
  role: "user" | "assistant";
  text: string;
  provenance?: ProvenanceEntry[];
  commandsExecuted?: string[];
}
