// Annotator session flow: tutorial -> headphone check -> task loop.
// The loop keeps fetching tasks until the session is blocked, the campaign
// drains, or the ranking completes.

import { ApiClient, ApiError, TaskView, taskKeyOf } from './api';
import {
  renderBlocked, renderDone, renderHeadphoneCheck, renderTask, renderTutorial,
} from './ui';

export class AnnotatorApp {
  private sessionId = '';

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private campaignId: string,
    private annotator: string,
  ) {}

  async start(): Promise<void> {
    renderTutorial(this.root, () => {
      renderHeadphoneCheck(this.root, () => {
        void this.begin();
      });
    });
  }

  private async begin(): Promise<void> {
    const session = await this.api.createSession(this.campaignId, this.annotator);
    this.sessionId = session.session;
    await this.loop();
  }

  private async loop(): Promise<void> {
    for (;;) {
      let task: TaskView;
      try {
        task = await this.api.nextTask(this.sessionId);
      } catch (err) {
        if (err instanceof ApiError && err.status === 400) {
          renderBlocked(this.root);
          return;
        }
        throw err;
      }
      if (task.status === 'drained') {
        renderDone(this.root, 'No more comparisons need your vote right now.');
        return;
      }
      const outcome = await this.presentTask(task);
      if (outcome === 'blocked' || outcome === 'quiz_failed') {
        renderBlocked(this.root);
        return;
      }
      if (outcome === 'complete') {
        renderDone(this.root, 'The campaign is fully ranked. Thank you!');
        return;
      }
    }
  }

  private presentTask(task: TaskView): Promise<string> {
    return new Promise((resolve, reject) => {
      renderTask(this.root, task, {
        audioUrl: (clipId) => this.api.audioUrl(clipId),
        onChoose: (clipId) => {
          this.api
            .submit(this.sessionId, taskKeyOf(task), clipId)
            .then((outcome) => {
              if (outcome.campaign_complete) resolve('complete');
              else resolve(outcome.outcome);
            })
            .catch(reject);
        },
      });
    });
  }
}
