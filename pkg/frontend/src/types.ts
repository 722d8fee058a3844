// Shapes of the service API payloads the console consumes.

export type ThreatLevel = "High" | "Medium" | "Low" | "Unknown";

export interface VerdictRow {
  cursor: number;
  subject: string;
  subject_kind: "process" | "file";
  host: string;
  label: string;
  level: ThreatLevel;
  fired_rules: string[];
  case_raised: boolean;
  evidence: string[];
  assessed_at: string;
}

export interface UnknownItem {
  subject: string;
  subject_kind: "process" | "file";
  host: string;
  label: string;
  level: ThreatLevel;
  hashes: Record<string, string>;
  ancestry: string[];
  assessed_at: string;
}

export interface OpenC2Command {
  action: string;
  target: Record<string, unknown>;
  args?: Record<string, string>;
  actuator?: { profile: string; asset_id?: string };
}

export interface ApprovalItem {
  record_id: string;
  coa_id: string | null;
  command: OpenC2Command;
  disposition: string;
  status: string;
  created_at: string;
  decided_at?: string;
  approver?: string;
  note?: string;
  subject_id?: string;
}

export interface TripleRow {
  subject: string;
  predicate: string;
  object: string | number;
  literal: boolean;
}

export interface EntityView {
  id: string;
  kind: string;
  props: Record<string, unknown>;
  refs?: Record<string, string[]>;
}

export interface ApiError {
  code: string;
  message: string;
}
