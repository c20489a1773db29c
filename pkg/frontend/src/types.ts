// Payload shapes of the session API. Field names mirror the server JSON
// one to one; the client never derives numbers from these, only displays
// them.

export type FeatureValue = number | string;

export interface FeatureSpec {
  name: string;
  kind: string; // "continuous" | "categorical"
  categories: string[];
}

export interface DatasetInfo {
  id: string;
  dim: number;
  features: FeatureSpec[];
  pool_size: number;
  negative_subjects: number[];
}

export interface Change {
  from: FeatureValue;
  to: FeatureValue;
}

export interface QuestionOption {
  pool_index: number;
  features: Record<string, FeatureValue>;
  changes: Record<string, Change>;
}

export interface QuestionPayload {
  round: number;
  k: number;
  options: QuestionOption[];
  indifferent_allowed: boolean;
}

export interface SessionView {
  session_id: string;
  dataset_id: string;
  status: 'awaiting_answer' | 'ready' | 'completed' | 'failed';
  round: number;
  budget: number;
  strategy: string;
  k: number;
  created_at: string;
  updated_at: string;
  subject: Record<string, FeatureValue>;
  center: number[][];
  radius: number;
  violated: number[];
  question: QuestionPayload | null;
  failure: { reason: string; detail: string } | null;
  plans: string[];
}

export interface GradPlan {
  method: 'grad';
  valid: boolean;
  iterations_used: number;
  worst_case_cost: number;
  terminal: Record<string, FeatureValue>;
  changes: Record<string, Change>;
}

export interface GraphStep {
  node: number;
  features: Record<string, FeatureValue>;
  changes: Record<string, Change>;
}

export interface GraphPlan {
  method: 'graph' | 'graph-worst-case';
  valid: boolean;
  path_cost: number;
  edge_costs: number[];
  steps: GraphStep[];
}

export type Plan = GradPlan | GraphPlan;

export type AnswerBody =
  | { kind: 'preferred'; index: number }
  | { kind: 'indifferent' }
  | { kind: 'auto' };

export interface TranscriptEntry {
  round: number;
  option_indices: number[];
  projection_distance: number;
  answer: { kind: string; index?: number };
  center: number[][];
  radius: number;
  violated: number[];
}

export interface Transcript {
  session_id: string;
  entries: TranscriptEntry[];
  status: string;
}
