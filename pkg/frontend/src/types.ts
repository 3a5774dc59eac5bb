/** Payload types matching the review service's JSON API. */

export type FlagKind = 'confident_head' | 'suspect_tail';

export interface QueueItem {
  sample_id: string;
  image_url: string;
  label: string;
  suggested_label: string | null;
  loss: number | null;
  flag_kind: FlagKind;
  round: number;
  version: number;
}

export interface RoundsPayload {
  rounds: { round: number; flagged: number; reviewed: number }[];
  classes: string[];
}

export interface RoundStats {
  round: number;
  reviewed: number;
  total: number;
  pipeline_accuracy: number | null;
  ratio_validated: number;
  train_size: number;
  validation_size: number;
}

export type VerdictAction = 'certify' | 'relabel' | 'reject' | 'ambiguous';

export interface VerdictRequest {
  sample_id: string;
  action: VerdictAction;
  expected_version: number;
  new_label?: string | null;
  reviewer?: string;
  round?: number;
}

export interface VerdictResponse {
  sample_id: string;
  status: string;
  label: string;
  version: number;
  round: number;
}

/** Error body the service returns for 4xx responses. */
export interface ApiErrorPayload {
  code: string;
  message: string;
  sample_id?: string;
}
